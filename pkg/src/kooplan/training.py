"""Alternating encoder / operator learning from synthetic observations.

The encoder f_theta maps a flattened grid observation to an estimate of the
object state.  Training alternates two phases:

  * every epoch, sample a window (trajectory, tau0), roll the composite
    predictor n_step steps from [xi_r(tau0); f_theta(iota(tau0))] and take one
    gradient step on the encoder against the accumulated robot-state error
    sum_k |xi_r(tau0+k+1) - xihat_r(tau0+k+1)|^2;
  * every refit_period epochs, recompute all object features and refit the
    lifted operator on the rebuilt composite snapshots.

The operator is constant during encoder steps; gradient flows only through
the encoder output at tau0, which thereafter propagates through the
operator's object block like any other state coordinate.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    InvalidInputError,
    TrainingDivergedError,
)
from .koopman import (
    LiftedOperator,
    Trajectory,
    build_snapshots,
    fit_edmd,
    prediction_loss,
)
from .observables import (
    Dictionary,
    EncoderParams,
    compose_composite,
    encode,
    encode_with_cache,
    encoder_vjp,
    identity_dictionary,
    lift,
    lift_jacobian_state,
    sgd_step,
)

Array = np.ndarray


@dataclass(frozen=True)
class TrainingConfig:
    n_epoch: int
    n_step: int = 10
    refit_period: int = 25
    learning_rate: float = 1e-3
    batch: int = 1
    seed: int = 0
    ridge: float = 0.0       # Tikhonov weight for the operator fits
    grad_clip: float = float("inf")  # global gradient-norm cap; inf = plain SGD

    def __post_init__(self):
        if self.n_epoch < 0:
            raise InvalidInputError("n_epoch must be non-negative")
        if self.n_step < 1 or self.refit_period < 1 or self.batch < 1:
            raise InvalidInputError("n_step, refit_period and batch must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.ridge < 0:
            raise InvalidInputError("ridge must be non-negative")
        if self.grad_clip <= 0:
            raise InvalidInputError("grad_clip must be positive")

    def to_dict(self) -> dict:
        return {
            "n_epoch": self.n_epoch, "n_step": self.n_step,
            "refit_period": self.refit_period, "learning_rate": self.learning_rate,
            "batch": self.batch, "seed": self.seed, "ridge": self.ridge,
            "grad_clip": self.grad_clip if np.isfinite(self.grad_clip) else None,
        }


@dataclass(frozen=True)
class ObservationTrajectory:
    """Aligned per-step records: robot state, raw observation, true object state
    (ground truth is for evaluation only, never used by the encoder loop)."""

    robot: Array    # (T, eta_r)
    obs: Array      # (T, p)
    objects: Array  # (T, eta_w)

    def __post_init__(self):
        for name in ("robot", "obs", "objects"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        T = self.robot.shape[0]
        if self.obs.shape[0] != T or self.objects.shape[0] != T:
            raise DimensionMismatchError("robot/obs/objects lengths differ")

    def __len__(self) -> int:
        return self.robot.shape[0]


@dataclass(frozen=True)
class ObservationDataset:
    trajectories: Tuple[ObservationTrajectory, ...]
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if not self.trajectories:
            raise EmptyDatasetError("observation dataset is empty")
        p = {tr.obs.shape[1] for tr in self.trajectories}
        if len(p) != 1:
            raise DimensionMismatchError("observation dimensions vary")

    @property
    def robot_dim(self) -> int:
        return self.trajectories[0].robot.shape[1]

    @property
    def object_dim(self) -> int:
        return self.trajectories[0].objects.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.trajectories[0].obs.shape[1]


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    operator_version: int
    wall_ms: float


@dataclass(frozen=True)
class RefitStats:
    epoch: int
    residual_before: float
    residual_after: float
    version: int


@dataclass(frozen=True)
class TrainResult:
    encoder: EncoderParams
    operator: LiftedOperator
    dictionary: Dictionary
    history: Tuple[EpochStats, ...]
    refits: Tuple[RefitStats, ...]


# ---------------------------------------------------------------------------
# Rollout loss
# ---------------------------------------------------------------------------

def _composite_trajectories(ds: ObservationDataset, enc: EncoderParams) -> list[Trajectory]:
    """Trajectories over [xi_r; f_theta(iota)] for operator fitting."""
    out = []
    for tr in ds.trajectories:
        feats = encode(enc, tr.obs)
        out.append(Trajectory.from_arrays(tr.robot, feats, None, ds.dt))
    return out


def refit_operator(
    ds: ObservationDataset,
    enc: EncoderParams,
    dic: Dictionary,
    version: int = 1,
    ridge: float = 0.0,
) -> LiftedOperator:
    """Recompute object features everywhere and refit the composite operator."""
    snaps = build_snapshots(_composite_trajectories(ds, enc))
    return fit_edmd(snaps, dic, ridge=ridge, version=version)


def _rollout(op, dic, enc, traj: ObservationTrajectory, tau0: int, n_step: int):
    """Forward pass of the multi-step prediction; returns per-step composite
    state estimates s_0..s_{n_step} plus the feature cache at tau0."""
    T = len(traj)
    if tau0 < 0 or tau0 + n_step > T - 1:
        raise IndexError(f"window [{tau0}, {tau0 + n_step}] exceeds trajectory of {T} steps")
    e0, cache = encode_with_cache(enc, traj.obs[tau0])
    s = np.concatenate([traj.robot[tau0], e0])
    states = [s]
    for _ in range(n_step):
        s = op.Pi @ (op.Gamma @ lift(dic, s))
        states.append(s)
    return states, cache


def rollout_loss(
    op: LiftedOperator,
    dic: Dictionary,
    enc: EncoderParams,
    traj: ObservationTrajectory,
    tau0: int,
    n_step: int,
) -> float:
    """Accumulated squared robot-state prediction error over an n_step window."""
    states, _ = _rollout(op, dic, enc, traj, tau0, n_step)
    nr = traj.robot.shape[1]
    loss = 0.0
    for k in range(1, n_step + 1):
        r = traj.robot[tau0 + k] - states[k][:nr]
        loss += float(r @ r)
    return loss


def _rollout_loss_and_encoder_grad(op, dic, enc, traj, tau0, n_step):
    """Loss plus its gradient with respect to the encoder parameters.

    The chain runs backwards through the re-lifted rollout; only the tau0
    feature estimate connects the loss to the encoder.
    """
    states, cache = _rollout(op, dic, enc, traj, tau0, n_step)
    nr = traj.robot.shape[1]
    n = op.n
    loss = 0.0
    locals_g = []
    for k in range(1, n_step + 1):
        r = traj.robot[tau0 + k] - states[k][:nr]
        loss += float(r @ r)
        g = np.zeros(n)
        g[:nr] = -2.0 * r
        locals_g.append(g)

    PiG = op.Pi @ op.Gamma
    G = locals_g[-1]
    for k in range(n_step - 1, -1, -1):
        J = PiG @ lift_jacobian_state(dic, states[k])
        G = J.T @ G
        if k > 0:
            G = G + locals_g[k - 1]
    d_e0 = G[nr:]
    grads, _ = encoder_vjp(enc, cache, d_e0)
    return loss, grads


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def train(
    ds: ObservationDataset,
    cfg: TrainingConfig,
    dict_r: Dictionary,
    enc: EncoderParams,
    dict_w: Optional[Dictionary] = None,
    clock: Callable[[], float] = time.perf_counter,
) -> TrainResult:
    """Run the alternating encoder/operator loop and return the full history.

    The composite dictionary is dict_r on the robot block composed with dict_w
    (identity by default) on the encoder features.
    """
    if dict_r.in_dim != ds.robot_dim:
        raise DimensionMismatchError(
            f"robot dictionary lifts dim {dict_r.in_dim}, data has {ds.robot_dim}"
        )
    if enc.in_dim != ds.obs_dim:
        raise DimensionMismatchError(
            f"encoder consumes dim {enc.in_dim}, observations have {ds.obs_dim}"
        )
    if dict_w is None:
        dict_w = identity_dictionary(enc.out_dim, constant=True)
    dic = compose_composite(dict_r, dict_w)

    rng = np.random.default_rng(cfg.seed)
    t_start = clock()
    version = 1
    op = refit_operator(ds, enc, dic, version=version, ridge=cfg.ridge)

    history: list[EpochStats] = []
    refits: list[RefitStats] = []
    windows = [
        (ti, len(tr) - 1 - cfg.n_step)
        for ti, tr in enumerate(ds.trajectories)
    ]
    if all(w <= 0 for _, w in windows):
        raise EmptyDatasetError(
            f"no trajectory is long enough for n_step={cfg.n_step} windows"
        )

    for epoch in range(1, cfg.n_epoch + 1):
        total_loss = 0.0
        acc = None
        for _ in range(cfg.batch):
            ti = int(rng.integers(len(ds.trajectories)))
            hi = windows[ti][1]
            while hi <= 0:  # resample trajectories too short for the window
                ti = int(rng.integers(len(ds.trajectories)))
                hi = windows[ti][1]
            tau0 = int(rng.integers(0, hi + 1))
            loss, grads = _rollout_loss_and_encoder_grad(
                op, dic, enc, ds.trajectories[ti], tau0, cfg.n_step
            )
            total_loss += loss
            if acc is None:
                acc = [[gW.copy(), gb.copy()] for gW, gb in grads]
            else:
                for a, (gW, gb) in zip(acc, grads):
                    a[0] += gW
                    a[1] += gb
        mean_loss = total_loss / cfg.batch
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(epoch)
        grads = [(a[0] / cfg.batch, a[1] / cfg.batch) for a in acc]
        if np.isfinite(cfg.grad_clip):
            gnorm = np.sqrt(sum(float((gW ** 2).sum() + (gb ** 2).sum())
                                for gW, gb in grads))
            if gnorm > cfg.grad_clip:
                scale = cfg.grad_clip / gnorm
                grads = [(gW * scale, gb * scale) for gW, gb in grads]
        enc = sgd_step(enc, grads, cfg.learning_rate)

        if epoch % cfg.refit_period == 0:
            trajs_now = _composite_trajectories(ds, enc)
            before = prediction_loss(op, dic, trajs_now)
            version += 1
            op = refit_operator(ds, enc, dic, version=version, ridge=cfg.ridge)
            after = prediction_loss(op, dic, trajs_now)
            refits.append(RefitStats(epoch, before, after, version))

        history.append(EpochStats(epoch, mean_loss, version,
                                  (clock() - t_start) * 1e3))

    return TrainResult(enc, op, dic, tuple(history), tuple(refits))


TRAIN_LOG_HEADER = ["epoch", "rollout_loss", "operator_version", "wall_ms"]


def write_train_log(path, history: Sequence[EpochStats]):
    """Per-epoch CSV log."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAIN_LOG_HEADER)
        for h in history:
            w.writerow([h.epoch, f"{h.loss:.12e}", h.operator_version,
                        f"{h.wall_ms:.3f}"])
