"""Serial-manipulator rigid-body dynamics and kinematics.

Standard Denavit-Hartenberg chains (1 to 6 revolute links) with the equation
of motion  tau = M(q) qdd + C(q, qd) qd + G(q)  evaluated by a recursive
Newton-Euler pass.  The mass matrix is extracted column-wise with unit
accelerations; forward dynamics solves M qdd = tau - C qd - G by Cholesky.

Hot paths (Newton-Euler, forward dynamics, RK4 stepping, forward kinematics,
capsule-vs-sphere collision tests) are numba kernels over packed arrays; the
dataclass wrappers do the validation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from .errors import (
    ConditioningError,
    DimensionMismatchError,
    DivergenceError,
    InvalidInputError,
)
from .koopman import Trajectory

Array = np.ndarray


# ---------------------------------------------------------------------------
# Model containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkParams:
    """One revolute link: standard DH row (a, alpha, d, theta_offset) plus
    mass, center of mass and inertia tensor about the COM, both in the link
    frame."""

    a: float
    alpha: float
    d: float
    theta_offset: float
    mass: float
    com: Array
    inertia: Array

    def __post_init__(self):
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(3))
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float).reshape(3, 3))
        if self.mass <= 0:
            raise InvalidInputError("link mass must be positive")
        I = self.inertia
        if np.max(np.abs(I - I.T)) > 1e-9 * max(1.0, np.max(np.abs(I))):
            raise InvalidInputError("inertia tensor must be symmetric")
        if np.any(np.linalg.eigvalsh(I) <= 0):
            raise InvalidInputError("inertia tensor must be positive definite")


@dataclass(frozen=True)
class ManipulatorModel:
    """Immutable chain description with packed arrays for the numba kernels."""

    links: Tuple[LinkParams, ...]
    gravity: Array
    joint_limits: Array       # (n, 2) [min, max] rad
    velocity_limits: Array    # (n,) rad/s

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        n = len(self.links)
        if not 1 <= n <= 6:
            raise InvalidInputError(f"supported link counts are 1..6, got {n}")
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))
        jl = np.asarray(self.joint_limits, dtype=float).reshape(n, 2)
        vl = np.asarray(self.velocity_limits, dtype=float).reshape(n)
        if np.any(jl[:, 0] >= jl[:, 1]):
            raise InvalidInputError("joint limits must satisfy min < max")
        if np.any(vl <= 0):
            raise InvalidInputError("velocity limits must be positive")
        object.__setattr__(self, "joint_limits", jl)
        object.__setattr__(self, "velocity_limits", vl)
        object.__setattr__(self, "dh", np.array(
            [[l.a, l.alpha, l.d, l.theta_offset] for l in self.links]))
        object.__setattr__(self, "masses", np.array([l.mass for l in self.links]))
        object.__setattr__(self, "coms", np.stack([l.com for l in self.links]))
        object.__setattr__(self, "inertias", np.stack([l.inertia for l in self.links]))

    @property
    def n_joints(self) -> int:
        return len(self.links)

    def _check_q(self, *vecs):
        for v in vecs:
            if np.asarray(v).shape != (self.n_joints,):
                raise DimensionMismatchError(
                    f"expected joint vector of length {self.n_joints}, got {np.asarray(v).shape}"
                )
            if not np.isfinite(v).all():
                raise InvalidInputError("non-finite joint quantity")


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _rnea(dh, mass, com, inertia, grav, q, qd, qdd):
    """Newton-Euler inverse dynamics: tau such that
    tau = M(q) qdd + C(q, qd) qd + G(q)."""
    n = dh.shape[0]
    R_all = np.zeros((n, 3, 3))
    r_all = np.zeros((n, 3))
    z_all = np.zeros((n, 3))
    w_all = np.zeros((n, 3))
    wd_all = np.zeros((n, 3))
    ac_all = np.zeros((n, 3))

    w = np.zeros(3)
    wd = np.zeros(3)
    a = -grav  # accelerating the base by -g plays the role of the gravity field
    zhat = np.zeros(3)
    zhat[2] = 1.0

    for i in range(n):
        th = q[i] + dh[i, 3]
        ct, st = np.cos(th), np.sin(th)
        ca, sa = np.cos(dh[i, 1]), np.sin(dh[i, 1])
        R = np.empty((3, 3))
        R[0, 0] = ct; R[0, 1] = -st * ca; R[0, 2] = st * sa
        R[1, 0] = st; R[1, 1] = ct * ca;  R[1, 2] = -ct * sa
        R[2, 0] = 0.0; R[2, 1] = sa;      R[2, 2] = ca
        # joint-to-joint offset expressed in frame i (constant for standard DH)
        r = np.empty(3)
        r[0] = dh[i, 0]
        r[1] = dh[i, 2] * sa
        r[2] = dh[i, 2] * ca

        tmp_w = w + qd[i] * zhat
        tmp_wd = wd + qdd[i] * zhat + _cross(w, qd[i] * zhat)
        w_new = R.T @ tmp_w
        wd_new = R.T @ tmp_wd
        a_new = R.T @ a + _cross(wd_new, r) + _cross(w_new, _cross(w_new, r))

        c = com[i]
        ac = a_new + _cross(wd_new, c) + _cross(w_new, _cross(w_new, c))

        R_all[i] = R
        r_all[i] = r
        z_all[i] = R[2]  # z-axis of frame i-1 expressed in frame i
        w_all[i] = w_new
        wd_all[i] = wd_new
        ac_all[i] = ac
        w, wd, a = w_new, wd_new, a_new

    tau = np.zeros(n)
    f_child = np.zeros(3)
    n_child = np.zeros(3)
    for i in range(n - 1, -1, -1):
        F = mass[i] * ac_all[i]
        Iw = inertia[i] @ w_all[i]
        N = inertia[i] @ wd_all[i] + _cross(w_all[i], Iw)
        if i < n - 1:
            Rf = R_all[i + 1] @ f_child
            Rn = R_all[i + 1] @ n_child
        else:
            Rf = np.zeros(3)
            Rn = np.zeros(3)
        f_i = F + Rf
        n_i = N + _cross(r_all[i] + com[i], F) + _cross(r_all[i], Rf) + Rn
        tau[i] = n_i @ z_all[i]
        f_child = f_i
        n_child = n_i
    return tau


@njit(cache=True)
def _mass_matrix(dh, mass, com, inertia, q):
    n = dh.shape[0]
    M = np.zeros((n, n))
    g0 = np.zeros(3)
    qz = np.zeros(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        M[:, j] = _rnea(dh, mass, com, inertia, g0, q, qz, e)
    return 0.5 * (M + M.T)


@njit(cache=True)
def _chol_solve(M, rhs):
    n = M.shape[0]
    L = np.linalg.cholesky(M)
    y = np.zeros(n)
    for i in range(n):
        s = rhs[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _fwd_dyn(dh, mass, com, inertia, grav, q, qd, tau):
    n = dh.shape[0]
    bias = _rnea(dh, mass, com, inertia, grav, q, qd, np.zeros(n))
    M = _mass_matrix(dh, mass, com, inertia, q)
    return _chol_solve(M, tau - bias)


@njit(cache=True)
def _rk4_step(dh, mass, com, inertia, grav, q, qd, tau, dt):
    """One classical RK4 step under zero-order-hold torque."""
    k1q = qd
    k1v = _fwd_dyn(dh, mass, com, inertia, grav, q, qd, tau)
    q2 = q + 0.5 * dt * k1q
    v2 = qd + 0.5 * dt * k1v
    k2q = v2
    k2v = _fwd_dyn(dh, mass, com, inertia, grav, q2, v2, tau)
    q3 = q + 0.5 * dt * k2q
    v3 = qd + 0.5 * dt * k2v
    k3q = v3
    k3v = _fwd_dyn(dh, mass, com, inertia, grav, q3, v3, tau)
    q4 = q + dt * k3q
    v4 = qd + dt * k3v
    k4q = v4
    k4v = _fwd_dyn(dh, mass, com, inertia, grav, q4, v4, tau)
    q_new = q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
    qd_new = qd + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return q_new, qd_new


@njit(cache=True)
def _fk_points(dh, q):
    """World positions of the base and every joint origin, shape (n+1, 3)."""
    n = dh.shape[0]
    pts = np.zeros((n + 1, 3))
    R = np.eye(3)
    p = np.zeros(3)
    for i in range(n):
        th = q[i] + dh[i, 3]
        ct, st = np.cos(th), np.sin(th)
        ca, sa = np.cos(dh[i, 1]), np.sin(dh[i, 1])
        Ri = np.empty((3, 3))
        Ri[0, 0] = ct; Ri[0, 1] = -st * ca; Ri[0, 2] = st * sa
        Ri[1, 0] = st; Ri[1, 1] = ct * ca;  Ri[1, 2] = -ct * sa
        Ri[2, 0] = 0.0; Ri[2, 1] = sa;      Ri[2, 2] = ca
        pi = np.empty(3)
        pi[0] = dh[i, 0] * ct
        pi[1] = dh[i, 0] * st
        pi[2] = dh[i, 2]
        p = p + R @ pi
        R = R @ Ri
        pts[i + 1] = p
    return pts


@njit(cache=True)
def _seg_point_dist(p0, p1, c):
    d = p1 - p0
    dd = d @ d
    if dd <= 0.0:
        v = c - p0
        return np.sqrt(v @ v)
    t = (c - p0) @ d / dd
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    v = c - (p0 + t * d)
    return np.sqrt(v @ v)


@njit(cache=True)
def _config_clearance(dh, q, centers, radii, cap_r):
    """Min over links and spheres of surface-to-surface distance."""
    pts = _fk_points(dh, q)
    best = 1e30
    for o in range(centers.shape[0]):
        for i in range(pts.shape[0] - 1):
            dist = _seg_point_dist(pts[i], pts[i + 1], centers[o]) - radii[o] - cap_r
            if dist < best:
                best = dist
    return best


@njit(cache=True)
def _edge_collides(dh, qa, ta, qb, tb, t0, dtp, centers, radii, cap_r, resolution):
    """Sample the straight joint-space edge and test the time-interpolated
    predicted spheres.  centers: (H, k, 3), radii: (H, k)."""
    H = centers.shape[0]
    k = centers.shape[1]
    c = np.empty(3)
    for s in range(1, resolution + 1):
        f = s / resolution
        q = qa + f * (qb - qa)
        t = ta + f * (tb - ta)
        u = (t - t0) / dtp
        i0 = int(np.floor(u))
        if i0 < 0:
            i0 = 0
        if i0 > H - 2:
            i0 = H - 2
        w = u - i0
        if w < 0.0:
            w = 0.0
        elif w > 1.0:
            w = 1.0
        pts = _fk_points(dh, q)
        for o in range(k):
            for m in range(3):
                c[m] = (1.0 - w) * centers[i0, o, m] + w * centers[i0 + 1, o, m]
            r = (1.0 - w) * radii[i0, o] + w * radii[i0 + 1, o]
            for i in range(pts.shape[0] - 1):
                if _seg_point_dist(pts[i], pts[i + 1], c) <= r + cap_r:
                    return True
    return False


@njit(cache=True)
def _nearest_node(qs, count, q):
    best = 0
    best_d = 1e300
    for i in range(count):
        d = 0.0
        for j in range(q.shape[0]):
            diff = qs[i, j] - q[j]
            d += diff * diff
        if d < best_d:
            best_d = d
            best = i
    return best


@njit(cache=True)
def _track_cycle(dh, mass, com, inertia, grav, q, qd,
                 q_des, qd_des, qdd_des, kp, kd, dt,
                 obs_centers, obs_radii, cap_r):
    """Advance one control cycle of `q_des.shape[0]` substeps under a
    computed-torque law with PD feedback.  obs_centers: (substeps, k, 3) true
    obstacle centers at each substep end, used for clearance bookkeeping.

    Returns (q, qd, min_clearance, collided).
    """
    n_sub = q_des.shape[0]
    min_clear = 1e30
    collided = False
    for s in range(n_sub):
        v = qdd_des[s] + kp * (q_des[s] - q) + kd * (qd_des[s] - qd)
        tau = _rnea(dh, mass, com, inertia, grav, q, qd, v)
        q, qd = _rk4_step(dh, mass, com, inertia, grav, q, qd, tau, dt)
        clear = _config_clearance(dh, q, obs_centers[s], obs_radii, cap_r)
        if clear < min_clear:
            min_clear = clear
        if clear <= 0.0:
            collided = True
            break
    return q, qd, min_clear, collided


# ---------------------------------------------------------------------------
# Public wrappers
# ---------------------------------------------------------------------------

def inverse_dynamics(model: ManipulatorModel, q: Array, qd: Array, qdd: Array) -> Array:
    """Joint torques tau = M(q) qdd + C(q, qd) qd + G(q) [N m]."""
    q, qd, qdd = (np.asarray(v, dtype=float) for v in (q, qd, qdd))
    model._check_q(q, qd, qdd)
    return _rnea(model.dh, model.masses, model.coms, model.inertias,
                 model.gravity, q, qd, qdd)


def mass_matrix(model: ManipulatorModel, q: Array) -> Array:
    q = np.asarray(q, dtype=float)
    model._check_q(q)
    return _mass_matrix(model.dh, model.masses, model.coms, model.inertias, q)


def forward_dynamics(model: ManipulatorModel, q: Array, qd: Array, tau: Array) -> Array:
    """Joint accelerations from torques; the SPD mass matrix is factored by
    Cholesky."""
    q, qd, tau = (np.asarray(v, dtype=float) for v in (q, qd, tau))
    model._check_q(q, qd, tau)
    try:
        return _fwd_dyn(model.dh, model.masses, model.coms, model.inertias,
                        model.gravity, q, qd, tau)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"mass matrix is not numerically SPD: {exc}") from exc


def kinetic_energy(model: ManipulatorModel, q: Array, qd: Array) -> float:
    return 0.5 * float(qd @ mass_matrix(model, q) @ qd)


def fk_points(model: ManipulatorModel, q: Array) -> Array:
    q = np.asarray(q, dtype=float)
    model._check_q(q)
    return _fk_points(model.dh, q)


def fk_ee(model: ManipulatorModel, q: Array) -> Array:
    """End-effector position, world frame [m]."""
    return fk_points(model, q)[-1]


def jacobian_position(model: ManipulatorModel, q: Array) -> Array:
    """Positional Jacobian (3, n) of the end effector."""
    q = np.asarray(q, dtype=float)
    model._check_q(q)
    n = model.n_joints
    pts = np.zeros((n + 1, 3))
    zs = np.zeros((n, 3))
    R = np.eye(3)
    p = np.zeros(3)
    for i in range(n):
        zs[i] = R[:, 2]
        th = q[i] + model.dh[i, 3]
        ct, st = np.cos(th), np.sin(th)
        ca, sa = np.cos(model.dh[i, 1]), np.sin(model.dh[i, 1])
        Ri = np.array([[ct, -st * ca, st * sa],
                       [st, ct * ca, -ct * sa],
                       [0.0, sa, ca]])
        p = p + R @ np.array([model.dh[i, 0] * ct, model.dh[i, 0] * st, model.dh[i, 2]])
        R = R @ Ri
        pts[i + 1] = p
    ee = pts[-1]
    J = np.zeros((3, n))
    for i in range(n):
        J[:, i] = np.cross(zs[i], ee - pts[i])
    return J


def integrate_rk4(
    model: ManipulatorModel,
    q0: Array,
    qd0: Array,
    torque_fn: Callable[[float, Array, Array], Array],
    dt: float,
    steps: int,
    t0: float = 0.0,
    divergence_bound: float = 1e6,
) -> Trajectory:
    """Classical 4th-order Runge-Kutta on the stacked state [q; qd].

    torque_fn(t, q, qd) is evaluated at every stage.  Returns a Trajectory of
    robot states (no object block) with the stage-one torques as inputs.
    """
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    q = np.asarray(q0, dtype=float).copy()
    qd = np.asarray(qd0, dtype=float).copy()
    model._check_q(q, qd)
    n = model.n_joints
    args = (model.dh, model.masses, model.coms, model.inertias, model.gravity)

    def f(t, q_, qd_):
        tau = np.asarray(torque_fn(t, q_, qd_), dtype=float)
        return qd_, _fwd_dyn(*args, q_, qd_, tau), tau

    robot = np.empty((steps + 1, 2 * n))
    inputs = np.empty((steps, n))
    robot[0] = np.concatenate([q, qd])
    t = t0
    for s in range(steps):
        k1q, k1v, tau1 = f(t, q, qd)
        k2q, k2v, _ = f(t + dt / 2, q + dt / 2 * k1q, qd + dt / 2 * k1v)
        k3q, k3v, _ = f(t + dt / 2, q + dt / 2 * k2q, qd + dt / 2 * k2v)
        k4q, k4v, _ = f(t + dt, q + dt * k3q, qd + dt * k3v)
        q = q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
        qd = qd + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        t += dt
        state = np.concatenate([q, qd])
        if not np.isfinite(state).all() or np.max(np.abs(state)) > divergence_bound:
            raise DivergenceError(s + 1, "simulation state exceeded bounds")
        robot[s + 1] = state
        inputs[s] = tau1
    return Trajectory.from_arrays(robot, None, inputs, dt, t0=t0)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _rod_inertia(mass: float, endpoint: Array) -> Array:
    """Inertia of a slender rod from the frame origin back along `endpoint`,
    about its COM, padded to stay positive definite."""
    L = float(np.linalg.norm(endpoint))
    if L <= 0:
        return np.eye(3) * max(mass * 1e-3, 1e-6)
    u = np.asarray(endpoint) / L
    I_perp = mass * L * L / 12.0
    eps = max(mass * 1e-3, 1e-6)
    return I_perp * (np.eye(3) - np.outer(u, u)) + eps * np.outer(u, u)


def planar_two_link(
    m1: float = 1.2,
    m2: float = 0.9,
    l1: float = 1.0,
    l2: float = 0.8,
    gravity: Optional[Array] = None,
    velocity_limit: float = 3.0,
) -> ManipulatorModel:
    """Planar 2R chain in the x-y plane, COM at mid-link, rod inertias.

    With gravity (0, -g, 0) this matches the textbook closed-form planar arm
    used as the analytic oracle in the tests.
    """
    if gravity is None:
        gravity = np.zeros(3)
    links = []
    for m, l in ((m1, l1), (m2, l2)):
        com = np.array([-l / 2.0, 0.0, 0.0])
        links.append(LinkParams(l, 0.0, 0.0, 0.0, m, com, _rod_inertia(m, np.array([l, 0, 0]))))
    lim = np.array([[-2 * np.pi, 2 * np.pi]] * 2)
    return ManipulatorModel(tuple(links), gravity, lim, np.full(2, velocity_limit))


def arm_six(gravity: Optional[Array] = None) -> ManipulatorModel:
    """Default 6-DoF arm: roughly PUMA-like proportions, ~1.3 m reach."""
    if gravity is None:
        gravity = np.zeros(3)
    rows = [
        # a, alpha, d, mass
        (0.00, np.pi / 2, 0.35, 7.0),
        (0.45, 0.0, 0.00, 5.0),
        (0.05, np.pi / 2, 0.00, 3.0),
        (0.00, -np.pi / 2, 0.40, 2.5),
        (0.00, np.pi / 2, 0.00, 1.2),
        (0.00, 0.0, 0.10, 0.6),
    ]
    links = []
    for a, alpha, d, m in rows:
        sa, ca = np.sin(alpha), np.cos(alpha)
        r = np.array([a, d * sa, d * ca])  # joint-to-joint offset in the link frame
        com = -0.5 * r
        links.append(LinkParams(a, alpha, d, 0.0, m, com, _rod_inertia(m, r)))
    limits = np.array([
        [-2.9, 2.9],
        [-2.2, 2.2],
        [-2.6, 2.6],
        [-3.0, 3.0],
        [-2.0, 2.0],
        [-3.0, 3.0],
    ])
    vel = np.array([1.8, 1.6, 1.8, 2.2, 2.2, 2.5])
    return ManipulatorModel(tuple(links), gravity, limits, vel)
