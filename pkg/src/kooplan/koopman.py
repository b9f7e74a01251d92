"""Lifted linear system identification from snapshot data.

Given shifted snapshot matrices X = [chi_1 .. chi_{N-1}], Xp = [chi_2 .. chi_N]
and inputs U = [u_1 .. u_{N-1}], the fit solves

    min_Theta || phi(Xp) - Theta [phi(X); U] ||_F,   Theta = [Gamma Delta],

by Moore-Penrose pseudoinverse, giving lifted dynamics

    z_{k+1} = Gamma z_k + Delta u_k,     chi_k = Pi z_k.

Pi is an exact row selection whenever the dictionary embeds the raw state
(all the built-in ones do); otherwise it is a least-squares decoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DimensionMismatchError,
    DivergenceError,
    EmptyDatasetError,
    InvalidInputError,
)
from .observables import Dictionary, lift, lift_many

Array = np.ndarray

# Relative singular-value cutoff used throughout the library.
DEFAULT_TOL_REL = 1e-10


# ---------------------------------------------------------------------------
# State containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompositeState:
    """Robot joint state stacked with obstacle states at one time step.

    robot: (eta_r,) joint angles [rad] and velocities [rad/s].
    objects: (eta_w,) concatenated per-obstacle positions [m] and velocities [m/s].
    time: seconds.
    """

    robot: Array
    objects: Array
    time: float

    def __post_init__(self):
        object.__setattr__(self, "robot", np.asarray(self.robot, dtype=float))
        object.__setattr__(self, "objects", np.asarray(self.objects, dtype=float))
        if not (np.isfinite(self.robot).all() and np.isfinite(self.objects).all()):
            raise InvalidInputError("composite state contains non-finite entries")
        if not np.isfinite(self.time):
            raise InvalidInputError("composite state time is non-finite")

    @property
    def dim(self) -> int:
        return self.robot.shape[0] + self.objects.shape[0]

    def stacked(self) -> Array:
        return np.concatenate([self.robot, self.objects])


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled state sequence with the inputs applied between steps.

    inputs has exactly len(states) - 1 rows; timestamps must advance by dt
    (relative tolerance 1e-9).
    """

    states: Tuple[CompositeState, ...]
    inputs: Array  # (T-1, m)
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=float))
        T = len(self.states)
        if T == 0:
            raise EmptyDatasetError("trajectory has no states")
        if self.inputs.ndim != 2 or self.inputs.shape[0] != T - 1:
            raise DimensionMismatchError(
                f"inputs must be ({T - 1}, m), got {self.inputs.shape}"
            )
        dims = {(s.robot.shape[0], s.objects.shape[0]) for s in self.states}
        if len(dims) != 1:
            raise DimensionMismatchError("state dimensions vary along trajectory")
        for k in range(T - 1):
            gap = self.states[k + 1].time - self.states[k].time
            tol = 1e-9 * max(1.0, abs(self.states[k + 1].time))
            if not (gap > 0 and abs(gap - self.dt) <= tol):
                raise InvalidInputError(
                    f"timestamps not advancing by dt at step {k}: gap={gap}, dt={self.dt}"
                )

    @classmethod
    def from_arrays(
        cls,
        robot: Array,
        objects: Optional[Array] = None,
        inputs: Optional[Array] = None,
        dt: float = 1.0,
        t0: float = 0.0,
    ) -> "Trajectory":
        robot = np.atleast_2d(np.asarray(robot, dtype=float))
        T = robot.shape[0]
        if objects is None:
            objects = np.zeros((T, 0))
        objects = np.asarray(objects, dtype=float).reshape(T, -1)
        if inputs is None:
            inputs = np.zeros((T - 1, 0))
        states = tuple(
            CompositeState(robot[k], objects[k], t0 + k * dt) for k in range(T)
        )
        return cls(states, inputs, dt)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def state_dim(self) -> int:
        return self.states[0].dim

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def states_matrix(self) -> Array:
        """Column-stacked states, shape (n, T)."""
        return np.stack([s.stacked() for s in self.states], axis=1)

    def inputs_matrix(self) -> Array:
        """Column-stacked inputs, shape (m, T-1)."""
        return self.inputs.T.copy()


@dataclass(frozen=True)
class SnapshotDataset:
    """Paired shifted state matrices plus inputs: X, Xp are (n, N-1), U is (m, N-1)."""

    X: Array
    Xp: Array
    U: Array
    dt: float

    def __post_init__(self):
        for name in ("X", "Xp", "U"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.X.shape != self.Xp.shape:
            raise DimensionMismatchError(f"X {self.X.shape} vs Xp {self.Xp.shape}")
        if self.U.shape[1] != self.X.shape[1]:
            raise DimensionMismatchError(
                f"U has {self.U.shape[1]} columns, expected {self.X.shape[1]}"
            )
        if self.X.shape[1] == 0:
            raise EmptyDatasetError("snapshot dataset has no columns")
        for name in ("X", "Xp", "U"):
            if not np.isfinite(getattr(self, name)).all():
                raise InvalidInputError(f"{name} contains non-finite entries")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def n_cols(self) -> int:
        return self.X.shape[1]


def build_snapshots(trajs: Sequence[Trajectory]) -> SnapshotDataset:
    """Pool (chi_k, chi_{k+1}, u_k) columns over trajectories.

    No column pairs a state with its successor across a trajectory boundary.
    """
    trajs = list(trajs)
    if not trajs:
        raise EmptyDatasetError("no trajectories given")
    dt = trajs[0].dt
    n = trajs[0].state_dim
    m = trajs[0].input_dim
    Xs, Xps, Us = [], [], []
    for i, tr in enumerate(trajs):
        if len(tr) < 2:
            raise EmptyDatasetError(f"trajectory {i} has fewer than 2 states")
        if abs(tr.dt - dt) > 1e-12 * max(1.0, abs(dt)):
            raise DimensionMismatchError(f"trajectory {i} dt={tr.dt} differs from {dt}")
        if tr.state_dim != n or tr.input_dim != m:
            raise DimensionMismatchError(
                f"trajectory {i} dims ({tr.state_dim},{tr.input_dim}) differ from ({n},{m})"
            )
        S = tr.states_matrix()
        Xs.append(S[:, :-1])
        Xps.append(S[:, 1:])
        Us.append(tr.inputs_matrix())
    return SnapshotDataset(np.hstack(Xs), np.hstack(Xps), np.hstack(Us), dt)


# ---------------------------------------------------------------------------
# Pseudoinverse
# ---------------------------------------------------------------------------

def _svd_pinv(Mx: Array, tol_rel: float) -> Tuple[Array, int]:
    """SVD pseudoinverse plus the numerical rank at the relative cutoff."""
    U, s, Vt = np.linalg.svd(Mx, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((Mx.shape[1], Mx.shape[0])), 0
    cutoff = tol_rel * s[0]
    keep = s > cutoff
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (Vt.T * s_inv) @ U.T, int(keep.sum())


def pinv(Mx: Array, tol_rel: float = DEFAULT_TOL_REL) -> Array:
    """Moore-Penrose pseudoinverse with singular values below tol_rel * sigma_max
    treated as zero."""
    Mx = np.asarray(Mx, dtype=float)
    if not np.isfinite(Mx).all():
        raise InvalidInputError("matrix contains non-finite entries")
    if not (0.0 < tol_rel < 1.0):
        raise InvalidInputError(f"tol_rel must lie in (0, 1), got {tol_rel}")
    return _svd_pinv(Mx, tol_rel)[0]


# ---------------------------------------------------------------------------
# Operator fitting and prediction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LiftedOperator:
    """Fitted lifted dynamics (Gamma, Delta) with decoding projection Pi.

    Gamma: (rho, rho), Delta: (rho, m), Pi: (n, rho).  rank_deficient is set
    when the regression matrix had numerical rank below rho + m, in which case
    the solution is the minimum-norm one.
    """

    Gamma: Array
    Delta: Array
    Pi: Array
    dict_id: str
    dt: float
    rank_deficient: bool = False
    version: int = 1

    def __post_init__(self):
        rho = self.Gamma.shape[0]
        if self.Gamma.shape != (rho, rho):
            raise DimensionMismatchError(f"Gamma must be square, got {self.Gamma.shape}")
        if self.Delta.shape[0] != rho:
            raise DimensionMismatchError(f"Delta rows {self.Delta.shape[0]} != rho {rho}")
        if self.Pi.shape[1] != rho:
            raise DimensionMismatchError(f"Pi cols {self.Pi.shape[1]} != rho {rho}")

    @property
    def rho(self) -> int:
        return self.Gamma.shape[0]

    @property
    def m(self) -> int:
        return self.Delta.shape[1]

    @property
    def n(self) -> int:
        return self.Pi.shape[0]


def fit_edmd(
    ds: SnapshotDataset,
    dic: Dictionary,
    tol_rel: float = DEFAULT_TOL_REL,
    ridge: float = 0.0,
    version: int = 1,
) -> LiftedOperator:
    """Least-squares fit of the lifted operator from snapshot data.

    ridge > 0 adds a Tikhonov term lam*|Theta|_F^2; the default 0 is the plain
    Frobenius-norm problem solved through the pseudoinverse.
    """
    if dic.in_dim != ds.n:
        raise DimensionMismatchError(
            f"dictionary lifts dim {dic.in_dim}, dataset has state dim {ds.n}"
        )
    Z = lift_many(dic, ds.X)
    Zp = lift_many(dic, ds.Xp)
    Omega = np.vstack([Z, ds.U])
    rho = dic.out_dim
    if ridge > 0.0:
        G = Omega @ Omega.T + ridge * np.eye(Omega.shape[0])
        Theta = np.linalg.solve(G, Omega @ Zp.T).T
        _, rank = _svd_pinv(Omega, tol_rel)
    else:
        Om_pinv, rank = _svd_pinv(Omega, tol_rel)
        Theta = Zp @ Om_pinv
    Gamma = Theta[:, :rho]
    Delta = Theta[:, rho:]

    ri = dic.raw_index
    if ri is not None:
        Pi = np.zeros((ds.n, rho))
        Pi[np.arange(ds.n), ri] = 1.0
    else:
        Pi = ds.X @ pinv(Z, tol_rel)

    return LiftedOperator(
        Gamma=Gamma,
        Delta=Delta,
        Pi=Pi,
        dict_id=dic.describe(),
        dt=ds.dt,
        rank_deficient=rank < rho + ds.m,
        version=version,
    )


def fit_residual_norm(op: LiftedOperator, ds: SnapshotDataset, dic: Dictionary) -> float:
    """Frobenius norm of the one-step lifted fit residual on a dataset."""
    Z = lift_many(dic, ds.X)
    Zp = lift_many(dic, ds.Xp)
    R = Zp - op.Gamma @ Z - op.Delta @ ds.U
    return float(np.linalg.norm(R))


def step_lifted(op: LiftedOperator, z: Array, u: Optional[Array] = None) -> Array:
    """One step of the lifted dynamics: Gamma z + Delta u."""
    z = np.asarray(z, dtype=float)
    if z.shape != (op.rho,):
        raise DimensionMismatchError(f"z has shape {z.shape}, expected ({op.rho},)")
    out = op.Gamma @ z
    if op.m > 0:
        if u is None:
            u = np.zeros(op.m)
        u = np.asarray(u, dtype=float)
        if u.shape != (op.m,):
            raise DimensionMismatchError(f"u has shape {u.shape}, expected ({op.m},)")
        out = out + op.Delta @ u
    elif u is not None and np.asarray(u).size > 0:
        raise DimensionMismatchError("operator takes no inputs")
    return out


def predict_rollout(
    op: LiftedOperator,
    dic: Dictionary,
    chi0: Array,
    us: Optional[Array],
    k: int,
    relift: bool = True,
) -> Array:
    """Predict k future states from chi0.

    Default behaviour projects to state space and re-lifts every step, i.e. it
    iterates the composed predictor Pi o (Gamma . + Delta u) o phi; with
    relift=False the recursion stays in lifted space and only the outputs are
    projected.  Returns an array of shape (k, n) holding states 1..k.
    """
    if k < 1:
        raise InvalidInputError("need at least one prediction step")
    chi = np.asarray(chi0, dtype=float)
    if chi.shape != (dic.in_dim,):
        raise DimensionMismatchError(f"chi0 has shape {chi.shape}, expected ({dic.in_dim},)")
    if us is None:
        us = np.zeros((k, op.m))
    us = np.asarray(us, dtype=float)
    if us.ndim == 1:
        us = us.reshape(-1, op.m) if op.m else us.reshape(k, 0)
    if us.shape[0] < k:
        raise DimensionMismatchError(f"need {k} inputs, got {us.shape[0]}")
    out = np.empty((k, op.n))
    if relift:
        for i in range(k):
            z = step_lifted(op, lift(dic, chi), us[i])
            chi = op.Pi @ z
            if not np.isfinite(chi).all():
                raise DivergenceError(i + 1, "predicted state is non-finite")
            out[i] = chi
    else:
        z = lift(dic, chi)
        for i in range(k):
            z = step_lifted(op, z, us[i])
            xi = op.Pi @ z
            if not np.isfinite(xi).all():
                raise DivergenceError(i + 1, "predicted state is non-finite")
            out[i] = xi
    return out


def prediction_loss(
    op: LiftedOperator, dic: Dictionary, trajs: Sequence[Trajectory]
) -> float:
    """Cumulative one-step prediction discrepancy in lifted space,

        sum_traj sum_tau | phi(chi(tau+1)) - (Gamma phi(chi(tau)) + Delta u(tau)) |^2.
    """
    total = 0.0
    for tr in trajs:
        Z = lift_many(dic, tr.states_matrix())
        R = Z[:, 1:] - op.Gamma @ Z[:, :-1]
        if op.m > 0:
            R = R - op.Delta @ tr.inputs_matrix()
        total += float((R ** 2).sum())
    return total
