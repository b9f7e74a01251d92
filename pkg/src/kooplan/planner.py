"""Time-augmented RRT over joint space with predicted moving obstacles.

Tree nodes carry (q, t); each edge moves at the joint-velocity limit, which
fixes the child's arrival time, and is collision-checked against the
time-interpolated obstacle prediction, so returned paths are feasible in both
space and time without any post-hoc time parameterization.

The execution loop closes the circle: observe debris, refit the obstacle
operator on a sliding window, predict, replan when the remaining plan
collides under the newest prediction, and track the plan with a
computed-torque PD law.  Three method variants share the loop:

  dk_rrt    refit the obstacle model online (every refresh)
  frozen    fit the obstacle model once after warmup, never refit
  reactive  no model at all; obstacles assumed frozen at the last observation
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np
from numba import njit

from .debris import debris_centers, debris_states, render_observation
from .dynamics import (
    ManipulatorModel,
    _config_clearance,
    _edge_collides,
    _fk_points,
    _nearest_node,
    _track_cycle,
    fk_ee,
    jacobian_position,
)
from .errors import DivergenceError, HorizonExceededError, InvalidInputError
from .koopman import LiftedOperator, Trajectory, build_snapshots, fit_edmd, predict_rollout
from .observables import Dictionary, compose_composite, encode, identity_dictionary
from .scenes import QuerySettings, Scene

Array = np.ndarray

METHODS = ("dk_rrt", "frozen", "reactive")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanNode:
    q: Array
    t: float
    parent: int  # index into the tree, -1 for the root


@dataclass(frozen=True)
class PlanQuery:
    start: Array
    goal: Array              # end-effector target point [m]
    tolerance: float
    max_nodes: int = 5000
    step_size: float = 0.2
    goal_bias: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float).reshape(3))
        if self.tolerance <= 0:
            raise InvalidInputError("tolerance must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise InvalidInputError("goal_bias must lie in [0, 1]")


@dataclass(frozen=True)
class ObstaclePrediction:
    """Predicted obstacle discs over a horizon: centers (H+1, k, 3) starting at
    t0 with spacing dt; radii already include the inflation schedule."""

    t0: float
    dt: float
    centers: Array
    radii: Array
    physical_radii: Array
    source_version: int = 0
    fallback: bool = False

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "radii", np.asarray(self.radii, dtype=float))
        object.__setattr__(self, "physical_radii",
                           np.asarray(self.physical_radii, dtype=float))
        if self.centers.ndim != 3 or self.centers.shape[:2] != self.radii.shape:
            raise InvalidInputError("prediction arrays are inconsistent")
        if self.radii.size:
            if np.any(self.radii < self.physical_radii[None, :] - 1e-12):
                raise InvalidInputError("inflated radius below physical radius")
            if np.any(np.diff(self.radii, axis=0) < -1e-12):
                raise InvalidInputError("inflation must not decrease along the horizon")

    @property
    def horizon_steps(self) -> int:
        return self.centers.shape[0] - 1

    @property
    def t_end(self) -> float:
        return self.t0 + self.horizon_steps * self.dt

    @property
    def n_obstacles(self) -> int:
        return self.centers.shape[1]


@dataclass(frozen=True)
class PlanResult:
    """Outcome of a tree search.  On failure `path` still holds a best-effort
    evasion branch: the certified-safe branch ending at the node with the most
    predicted clearance (possibly just the root)."""

    success: bool
    path: Tuple[PlanNode, ...]
    tree_size: int
    iterations: int = 0


@dataclass(frozen=True)
class ExecutionReport:
    success: bool
    collided: bool
    timed_out: bool
    execution_error: float
    planning_ms: float
    training_ms: float
    min_clearance: float
    cycles: int
    replans: int
    fallbacks: int
    goal_time: Optional[float] = None


# ---------------------------------------------------------------------------
# Obstacle prediction
# ---------------------------------------------------------------------------

def _inflation_radii(phys: Array, c0: float, c1: float, steps: int, dt: float) -> Array:
    k = np.arange(steps + 1)[:, None]
    return phys[None, :] + c0 + c1 * k * dt


def _affine_raw_rows(dic: Dictionary) -> Optional[Array]:
    """For dictionaries whose lift is [raw-state rows] + [constant-1 rows],
    re-lifting after projection equals resetting the constant rows to one.
    Returns the raw row index if the shortcut applies, else None."""
    ri = dic.raw_index
    if ri is None or dic.out_dim != dic.in_dim + (dic.out_dim - len(ri)):
        return None
    # every non-raw row must be a constant feature: true when each leaf is an
    # identity dictionary with the constant flag
    def all_ident_const(d: Dictionary) -> bool:
        if d.kind == "composite":
            return all(all_ident_const(p) for p in d.parts)
        return d.kind == "identity"
    return ri if all_ident_const(dic) else None


def _roll_affine(op: LiftedOperator, dic: Dictionary, raw_rows: Array,
                 x0: Array, k: int) -> Array:
    """Re-lifted rollout specialized to identity+constant dictionaries."""
    from .observables import lift as _lift
    z = _lift(dic, x0)
    const_rows = np.setdiff1d(np.arange(dic.out_dim), raw_rows)
    out = np.empty((k, len(raw_rows)))
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(k):
            z = op.Gamma @ z
            z[const_rows] = 1.0
            out[i] = z[raw_rows]
    if not np.isfinite(out).all():
        bad = int(np.argwhere(~np.isfinite(out).all(axis=1))[0, 0]) + 1
        raise DivergenceError(bad, "predicted state is non-finite")
    return out


def predict_obstacles(
    op: Optional[LiftedOperator],
    dic: Optional[Dictionary],
    current: Array,
    physical_radii: Array,
    horizon_steps: int,
    dt: float,
    inflation: Tuple[float, float] = (0.02, 0.05),
    t0: float = 0.0,
    position_only: bool = False,
    divergence_limit: float = 1e4,
) -> ObstaclePrediction:
    """Roll the obstacle state forward and inflate radii with the horizon.

    current: flat obstacle state, per obstacle [p, v] (or [p] when
    position_only).  A missing/diverging model falls back to constant-velocity
    extrapolation and sets the fallback flag.
    """
    if horizon_steps < 1:
        raise InvalidInputError("need at least one horizon step")
    phys = np.asarray(physical_radii, dtype=float)
    k = phys.shape[0]
    per = 3 if position_only else 6
    states = np.asarray(current, dtype=float).reshape(k, per)

    rolled = None
    fallback = False
    if op is not None and dic is not None:
        try:
            raw_rows = _affine_raw_rows(dic)
            if raw_rows is not None:
                out = _roll_affine(op, dic, raw_rows, states.reshape(-1), horizon_steps)
            else:
                out = predict_rollout(op, dic, states.reshape(-1), None, horizon_steps)
            if np.max(np.abs(out)) > divergence_limit:
                raise DivergenceError(horizon_steps, "prediction out of range")
            rolled = out.reshape(horizon_steps, k, per)
        except DivergenceError:
            fallback = True
    else:
        fallback = True

    centers = np.empty((horizon_steps + 1, k, 3))
    centers[0] = states[:, :3]
    if rolled is not None:
        centers[1:] = rolled[:, :, :3]
    else:
        vel = states[:, 3:6] if per == 6 else np.zeros((k, 3))
        steps = np.arange(1, horizon_steps + 1)[:, None, None]
        centers[1:] = states[None, :, :3] + steps * dt * vel[None, :, :]

    c0, c1 = inflation
    radii = _inflation_radii(phys, c0, c1, horizon_steps, dt)
    return ObstaclePrediction(
        t0=t0, dt=dt, centers=centers, radii=radii, physical_radii=phys,
        source_version=0 if op is None else op.version, fallback=fallback,
    )


def constant_prediction(
    current_centers: Array,
    physical_radii: Array,
    horizon_steps: int,
    dt: float,
    margin: float = 0.02,
    t0: float = 0.0,
) -> ObstaclePrediction:
    """Zero-prediction model: obstacles frozen at their last observed centers,
    flat safety margin (no growth)."""
    phys = np.asarray(physical_radii, dtype=float)
    k = phys.shape[0]
    centers = np.broadcast_to(
        np.asarray(current_centers, dtype=float).reshape(1, k, 3),
        (horizon_steps + 1, k, 3),
    ).copy()
    radii = np.broadcast_to(phys + margin, (horizon_steps + 1, k)).copy()
    return ObstaclePrediction(t0, dt, centers, radii, phys, source_version=0)


# ---------------------------------------------------------------------------
# Collision checking
# ---------------------------------------------------------------------------

def edge_collides(
    model: ManipulatorModel,
    q_a: Array,
    t_a: float,
    q_b: Array,
    t_b: float,
    pred: ObstaclePrediction,
    resolution: int,
    capsule_radius: float = 0.06,
) -> bool:
    """True iff any interpolated sample of the edge penetrates a predicted disc."""
    if t_b <= t_a:
        raise InvalidInputError("edge must advance in time")
    if resolution < 1:
        raise InvalidInputError("resolution must be >= 1")
    eps = 1e-9
    if t_a < pred.t0 - eps or t_b > pred.t_end + eps:
        raise HorizonExceededError(
            f"edge [{t_a}, {t_b}] outside prediction horizon [{pred.t0}, {pred.t_end}]"
        )
    if pred.n_obstacles == 0:
        return False
    return bool(_edge_collides(
        model.dh, np.asarray(q_a, dtype=float), t_a, np.asarray(q_b, dtype=float),
        t_b, pred.t0, pred.dt, pred.centers, pred.radii, capsule_radius, resolution,
    ))


def config_clearance(model: ManipulatorModel, q: Array, centers: Array,
                     radii: Array, capsule_radius: float) -> float:
    if len(radii) == 0:
        return float("inf")
    return float(_config_clearance(model.dh, np.asarray(q, dtype=float),
                                   centers, radii, capsule_radius))


# ---------------------------------------------------------------------------
# Inverse kinematics (goal biasing)
# ---------------------------------------------------------------------------

def ik_position(
    model: ManipulatorModel,
    q_seed: Array,
    goal: Array,
    tol: float,
    max_iters: int = 200,
    damping: float = 0.05,
) -> Optional[Array]:
    """Damped least-squares position IK; None if it fails to converge."""
    q = np.asarray(q_seed, dtype=float).copy()
    lo, hi = model.joint_limits[:, 0], model.joint_limits[:, 1]
    for _ in range(max_iters):
        err = goal - fk_ee(model, q)
        if np.linalg.norm(err) <= tol:
            return q
        J = jacobian_position(model, q)
        dq = J.T @ np.linalg.solve(J @ J.T + damping ** 2 * np.eye(3), err)
        step = np.clip(dq, -0.2, 0.2)
        q = np.clip(q + step, lo, hi)
    return None


# ---------------------------------------------------------------------------
# RRT
# ---------------------------------------------------------------------------

def predicted_clearance_at(model: ManipulatorModel, q: Array, t: float,
                           pred: ObstaclePrediction, capsule_radius: float) -> float:
    """Clearance of a configuration against the time-interpolated prediction."""
    if pred.n_obstacles == 0:
        return float("inf")
    u = np.clip((t - pred.t0) / pred.dt, 0.0, pred.horizon_steps)
    i0 = min(int(u), pred.horizon_steps - 1)
    w = u - i0
    centers = (1 - w) * pred.centers[i0] + w * pred.centers[i0 + 1]
    radii = (1 - w) * pred.radii[i0] + w * pred.radii[i0 + 1]
    return float(_config_clearance(model.dh, np.asarray(q, dtype=float),
                                   centers, radii, capsule_radius))


@njit(cache=True)
def _rrt_kernel(dh, lo, hi, vmax, step_size, goal_bias, wait_prob, wait_time,
                goal, tol, q_goal, has_ik, seed, max_nodes, max_iterations,
                t_end, pred_t0, pred_dt, centers, radii, cap_r, resolution,
                qs, ts, parents):
    """Tree growth loop.  Returns (count, goal_index, iterations); goal_index
    is -1 when the budget ran out."""
    np.random.seed(seed)
    n = lo.shape[0]
    count = 1
    iterations = 0
    k_obs = centers.shape[1]
    q_rand = np.empty(n)
    while count < max_nodes and iterations < max_iterations:
        iterations += 1
        wait = np.random.random() < wait_prob
        if has_ik and not wait and np.random.random() < goal_bias:
            for j in range(n):
                q_rand[j] = q_goal[j]
        else:
            for j in range(n):
                q_rand[j] = lo[j] + (hi[j] - lo[j]) * np.random.random()
        near = _nearest_node(qs, count, q_rand)
        if wait:
            q_new = qs[near].copy()
            t_new = ts[near] + wait_time
        else:
            dq = q_rand - qs[near]
            dist = np.sqrt(dq @ dq)
            if dist < 1e-12:
                continue
            if dist > step_size:
                dq = dq * (step_size / dist)
            q_new = qs[near] + dq
            dt_edge = 0.0
            degenerate = True
            for j in range(n):
                if q_new[j] < lo[j]:
                    q_new[j] = lo[j]
                elif q_new[j] > hi[j]:
                    q_new[j] = hi[j]
                adv = abs(q_new[j] - qs[near, j])
                if adv > 1e-12:
                    degenerate = False
                if adv / vmax[j] > dt_edge:
                    dt_edge = adv / vmax[j]
            if degenerate:
                continue
            t_new = ts[near] + dt_edge
        if t_new > t_end:
            continue  # cannot certify safety beyond the prediction horizon
        if k_obs > 0 and _edge_collides(dh, qs[near], ts[near], q_new, t_new,
                                        pred_t0, pred_dt, centers, radii,
                                        cap_r, resolution):
            continue
        qs[count] = q_new
        ts[count] = t_new
        parents[count] = near
        count += 1
        if not wait:
            ee = _fk_points(dh, q_new)[-1]
            de = ee - goal
            if np.sqrt(de @ de) <= tol:
                return count, count - 1, iterations
    return count, -1, iterations


def plan_rrt(
    query: PlanQuery,
    pred: ObstaclePrediction,
    model: ManipulatorModel,
    t0: Optional[float] = None,
    resolution: int = 8,
    capsule_radius: float = 0.06,
    speed_fraction: float = 1.0,
    wait_prob: float = 0.1,
    wait_time: float = 0.3,
) -> PlanResult:
    """Grow a time-augmented tree from (start, t0) until the end effector
    reaches the goal point, rejecting edges that collide with the prediction.

    Extensions occasionally wait in place (positive time, zero motion), which
    lets plans sit out an obstacle sweep and enter when a window opens.  Runs
    out of certified horizon or sampling budget -> failure result carrying the
    tree size (planning failure is a result, not an exception).
    """
    if not 0.0 < speed_fraction <= 1.0:
        raise InvalidInputError("speed_fraction must lie in (0, 1]")
    t0 = pred.t0 if t0 is None else t0
    n = model.n_joints
    lo, hi = model.joint_limits[:, 0], model.joint_limits[:, 1]
    vmax = model.velocity_limits * speed_fraction

    qs = np.empty((query.max_nodes, n))
    ts = np.empty(query.max_nodes)
    parents = np.full(query.max_nodes, -1, dtype=np.int64)
    qs[0] = np.clip(query.start, lo, hi)
    ts[0] = t0
    count = 1

    def path_from(idx: int) -> Tuple[PlanNode, ...]:
        chain = []
        while idx >= 0:
            chain.append(PlanNode(qs[idx].copy(), float(ts[idx]), int(parents[idx])))
            idx = parents[idx]
        return tuple(reversed(chain))

    if np.linalg.norm(fk_ee(model, qs[0]) - query.goal) <= query.tolerance:
        return PlanResult(True, path_from(0), 1, 0)

    q_goal = ik_position(model, qs[0], query.goal, query.tolerance * 0.5)
    has_ik = q_goal is not None
    count, goal_idx, iterations = _rrt_kernel(
        model.dh, lo, hi, vmax, query.step_size, query.goal_bias, wait_prob,
        wait_time, query.goal, query.tolerance,
        q_goal if has_ik else np.zeros(n), has_ik,
        int(query.seed) & 0x7FFFFFFF, query.max_nodes, 2 * query.max_nodes,
        pred.t_end, pred.t0, pred.dt, pred.centers, pred.radii,
        capsule_radius, resolution, qs, ts, parents,
    )
    if goal_idx >= 0:
        return PlanResult(True, path_from(goal_idx), count, iterations)
    best, best_score = 0, -np.inf
    for i in range(count):
        score = predicted_clearance_at(model, qs[i], ts[i], pred, capsule_radius)
        if score > best_score:
            best, best_score = i, score
    return PlanResult(False, path_from(best), count, iterations)


def path_state_at(path: Tuple[PlanNode, ...], t: float) -> tuple[Array, Array]:
    """Desired (q, qd) on a piecewise-linear path at absolute time t; holds the
    last configuration beyond the final node."""
    if not path:
        raise InvalidInputError("empty path")
    if t <= path[0].t:
        return path[0].q.copy(), np.zeros_like(path[0].q)
    for a, b in zip(path[:-1], path[1:]):
        if t <= b.t:
            f = (t - a.t) / (b.t - a.t)
            qd = (b.q - a.q) / (b.t - a.t)
            return a.q + f * (b.q - a.q), qd
    return path[-1].q.copy(), np.zeros_like(path[-1].q)


def path_collides(
    model: ManipulatorModel,
    path: Tuple[PlanNode, ...],
    t_now: float,
    pred: ObstaclePrediction,
    resolution: int,
    capsule_radius: float,
) -> bool:
    """Check the remaining portion of a plan against a (newer) prediction.

    Segments beyond the prediction horizon count as colliding: they can no
    longer be certified.
    """
    if pred.n_obstacles == 0:
        return False
    q_now, _ = path_state_at(path, t_now)
    prev_q, prev_t = q_now, t_now
    for node in path:
        if node.t <= t_now:
            continue
        if node.t > pred.t_end:
            return True
        if node.t > prev_t and _edge_collides(
            model.dh, prev_q, prev_t, node.q, node.t, pred.t0, pred.dt,
            pred.centers, pred.radii, capsule_radius, resolution,
        ):
            return True
        prev_q, prev_t = node.q, node.t
    return False


# ---------------------------------------------------------------------------
# Execution loop
# ---------------------------------------------------------------------------

def obstacle_dictionary(k_obs: int, per: int) -> Dictionary:
    """Per-obstacle identity+constant blocks composed over the stacked state.

    [p, v, 1] (or [p, 1]) is exactly linear for every scripted motion family,
    so independence across obstacles is free structure worth keeping."""
    dics = [identity_dictionary(per, constant=True) for _ in range(k_obs)]
    full = dics[0]
    for d in dics[1:]:
        full = compose_composite(full, d)
    return full


def _fit_obstacle_operator(window: list[Array], dt: float, k_obs: int, per: int,
                           dic: Dictionary, version: int) -> LiftedOperator:
    """Fit each obstacle's operator independently and assemble the
    block-diagonal joint operator over the composed dictionary."""
    arr = np.stack(window)
    single = identity_dictionary(per, constant=True)
    gammas = []
    rank_def = False
    for o in range(k_obs):
        tr = Trajectory.from_arrays(arr[:, o * per:(o + 1) * per], None, None, dt)
        op_o = fit_edmd(build_snapshots([tr]), single, version=version)
        gammas.append(op_o.Gamma)
        rank_def = rank_def or op_o.rank_deficient
    rho = dic.out_dim
    Gamma = np.zeros((rho, rho))
    d = per + 1
    for o, G in enumerate(gammas):
        Gamma[o * d:(o + 1) * d, o * d:(o + 1) * d] = G
    n = k_obs * per
    Pi = np.zeros((n, rho))
    Pi[np.arange(n), dic.raw_index] = 1.0
    return LiftedOperator(Gamma, np.zeros((rho, 0)), Pi, dic.describe(), dt,
                          rank_deficient=rank_def, version=version)


def run_episode(
    scene: Scene,
    method: str = "dk_rrt",
    seed: int = 0,
    query: Optional[QuerySettings] = None,
    encoder=None,
    clock: Callable[[], float] = time.perf_counter,
    trace: Optional[list] = None,
    events: Optional[list] = None,
) -> ExecutionReport:
    """One closed-loop episode: observe, refit, predict, (re)plan, track.

    Deterministic given (scene, method, seed); the clock only fills the
    timing fields.  When `trace` is a list, one row per executed cycle is
    appended: [t_end, q..., qd..., ee_xyz..., per-obstacle clearance...];
    `events` collects (t, tag) tuples for refits and replans.
    """
    if method not in METHODS:
        raise InvalidInputError(f"method must be one of {METHODS}")
    model = scene.manipulator
    ex = scene.execution
    qset = query if query is not None else scene.query
    field = scene.debris
    k_obs = len(field)
    phys = field.radii

    if ex.observe_mode == "encoder" and encoder is None:
        raise InvalidInputError("encoder observation mode needs encoder parameters")
    position_only = ex.observe_mode == "encoder"
    per = 3 if position_only else 6
    obs_dic = obstacle_dictionary(k_obs, per) if k_obs else None

    ss = np.random.SeedSequence([scene.seed, seed])
    rng_obs, rng_plan = (np.random.default_rng(s) for s in ss.spawn(2))

    n_cycles = int(math.floor(ex.time_limit / ex.dt_cycle))
    n = model.n_joints
    q = qset.start.copy()
    qd = np.zeros(n)
    args = (model.dh, model.masses, model.coms, model.inertias, model.gravity)

    window: list[Array] = []
    op: Optional[LiftedOperator] = None
    pred: Optional[ObstaclePrediction] = None
    path: Tuple[PlanNode, ...] = ()
    have_goal_plan = False
    hold_q = q.copy()
    last_plan_cycle = -(10 ** 9)

    planning_ms = 0.0
    training_ms = 0.0
    exec_err_sum = 0.0
    exec_err_count = 0
    min_clear = 1e3  # finite cap: "nothing within a kilometre"
    replans = 0
    fallbacks = 0
    collided = False
    success = False
    goal_time = None
    version = 0
    horizon_end = n_cycles * ex.dt_cycle

    sub_t = (np.arange(1, ex.substeps + 1)) * ex.dt_sim
    cycles_run = 0

    for c in range(n_cycles):
        t = c * ex.dt_cycle
        cycles_run = c + 1

        # -- observe ---------------------------------------------------------
        if k_obs:
            if position_only:
                grid = render_observation(field, scene.observation, t)
                feat = encode(encoder, grid)
                window.append(np.asarray(feat, dtype=float))
            else:
                s_true = debris_states(field, t)
                noisy = s_true.copy()
                noisy[:, :3] += ex.obs_pos_sigma * rng_obs.standard_normal((k_obs, 3))
                noisy[:, 3:] += ex.obs_vel_sigma * rng_obs.standard_normal((k_obs, 3))
                window.append(noisy.reshape(-1))
            if len(window) > ex.window:
                window.pop(0)

        # -- refit on the periodic refresh; predict and check every cycle -----
        active = c >= ex.warmup_cycles
        refresh = active and (c - ex.warmup_cycles) % ex.refit_period == 0
        if active:
            if refresh and k_obs and method == "dk_rrt" and len(window) >= ex.min_window:
                t_fit = clock()
                version += 1
                op = _fit_obstacle_operator(window, ex.dt_cycle, k_obs, per,
                                            obs_dic, version)
                training_ms += (clock() - t_fit) * 1e3
            elif refresh and k_obs and method == "frozen" and op is None \
                    and len(window) >= ex.min_window:
                t_fit = clock()
                version += 1
                op = _fit_obstacle_operator(window, ex.dt_cycle, k_obs, per,
                                            obs_dic, version)
                training_ms += (clock() - t_fit) * 1e3

            horizon_steps = max(1, int(math.ceil((horizon_end - t) / ex.dt_cycle)) + 1)
            if k_obs == 0:
                pred = ObstaclePrediction(t, ex.dt_cycle,
                                          np.zeros((horizon_steps + 1, 0, 3)),
                                          np.zeros((horizon_steps + 1, 0)),
                                          np.zeros(0))
            elif method == "reactive":
                pred = constant_prediction(window[-1].reshape(k_obs, -1)[:, :3],
                                           phys, horizon_steps, ex.dt_cycle,
                                           margin=ex.inflation_c0, t0=t)
            else:
                pred = predict_obstacles(
                    op, obs_dic, window[-1], phys, horizon_steps, ex.dt_cycle,
                    inflation=(ex.inflation_c0, ex.inflation_c1), t0=t,
                    position_only=position_only,
                )
                if pred.fallback:
                    fallbacks += 1

            stale = path_collides(model, path, t, pred, ex.edge_resolution,
                                  ex.capsule_radius) if path else False
            # a goal plan is retried on the refresh cadence while following an
            # evasion branch; an invalidated plan triggers a replan immediately
            # subject to a short cooldown that bounds planning compute
            need_plan = stale or (not path and refresh) or \
                (not have_goal_plan and refresh)
            if need_plan and c - last_plan_cycle < ex.replan_cooldown and not refresh:
                need_plan = False
            if need_plan:
                last_plan_cycle = c
                t_plan = clock()
                pq = PlanQuery(
                    start=q, goal=qset.goal, tolerance=qset.tolerance,
                    max_nodes=qset.max_nodes, step_size=qset.step_size,
                    goal_bias=qset.goal_bias, seed=int(rng_plan.integers(2 ** 63)),
                )
                result = plan_rrt(pq, pred, model, t0=t,
                                  resolution=ex.edge_resolution,
                                  capsule_radius=ex.capsule_radius,
                                  speed_fraction=ex.speed_fraction)
                planning_ms += (clock() - t_plan) * 1e3
                replans += 1
                have_goal_plan = result.success
                path = result.path
                if not path:
                    hold_q = q.copy()
                if events is not None:
                    events.append((t, f"replan_{'ok' if result.success else 'evade'}"
                                   + ("_stale" if stale else "")))

        # -- track one cycle ---------------------------------------------------
        q_des = np.empty((ex.substeps, n))
        qd_des = np.empty((ex.substeps, n))
        for s, tt in enumerate(sub_t):
            if path:
                q_des[s], qd_des[s] = path_state_at(path, t + tt)
            else:
                q_des[s] = hold_q
                qd_des[s] = 0.0
        if k_obs:
            true_centers = np.stack([debris_centers(field, t + tt) for tt in sub_t])
        else:
            true_centers = np.zeros((ex.substeps, 0, 3))
        q, qd, clear, hit = _track_cycle(
            *args, q, qd, q_des, qd_des, np.zeros((ex.substeps, n)),
            ex.kp, ex.kd, ex.dt_sim, true_centers, phys, ex.capsule_radius,
        )
        min_clear = min(min_clear, float(clear))
        if trace is not None:
            ee = fk_ee(model, q)
            clears = [
                config_clearance(model, q, debris_centers(field, t + ex.dt_cycle)[o:o + 1],
                                 phys[o:o + 1], ex.capsule_radius)
                for o in range(k_obs)
            ]
            trace.append([t + ex.dt_cycle, *q, *qd, *ee, *clears])
        if hit:
            collided = True
            break
        if path:
            exec_err_sum += float(np.linalg.norm(q - q_des[-1]))
            exec_err_count += 1
        if np.linalg.norm(fk_ee(model, q) - qset.goal) <= qset.tolerance:
            success = True
            goal_time = t + ex.dt_cycle
            break

    return ExecutionReport(
        success=success,
        collided=collided,
        timed_out=not success and not collided,
        execution_error=exec_err_sum / exec_err_count if exec_err_count else 0.0,
        planning_ms=planning_ms,
        training_ms=training_ms,
        min_clearance=float(min_clear),
        cycles=cycles_run,
        replans=replans,
        fallbacks=fallbacks,
        goal_time=goal_time,
    )


def execute_with_replanning(
    scene: Scene,
    query: Optional[QuerySettings] = None,
    seed: int = 0,
    encoder=None,
    clock: Callable[[], float] = time.perf_counter,
) -> ExecutionReport:
    """Closed-loop run with online model refitting (the full pipeline)."""
    return run_episode(scene, "dk_rrt", seed=seed, query=query, encoder=encoder,
                       clock=clock)


def plan_reactive_baseline(
    query: Optional[QuerySettings],
    scene: Scene,
    seed: int = 0,
    clock: Callable[[], float] = time.perf_counter,
) -> ExecutionReport:
    """Baseline: identical loop, obstacles assumed frozen at the last
    observation (no prediction)."""
    return run_episode(scene, "reactive", seed=seed, query=query, clock=clock)
