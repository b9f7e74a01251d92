"""Split system identification: known vector field + data-driven residual.

Two data sources are reconciled: a collocation set sampled across the
state-input manifold, where the known component of the dynamics can be
evaluated exactly, and trajectory snapshots, which additionally contain
whatever the known model misses.

From collocation data the continuous-time generator L of the known flow is
regressed on observables Theta(xi, u),

    min_L sum_i | d/dtau Theta(xi_i, u_i) - L Theta(xi_i, u_i) |^2,

with d/dtau Theta = (dTheta/dxi) f_known(xi, u); inputs are constant along a
flow so their columns contribute nothing.  Discrete half-interval steps come
from the matrix exponential K = expm(L dtau / 2).

From trajectory snapshots the residual operator is

    H = K^+ Theta(Xp, U) (K Theta(X, U))^+,

and a full prediction step applies the symmetric sandwich K H K in lifted
space before projecting back.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import expm

from .errors import DimensionMismatchError, DivergenceError, EmptyDatasetError, InvalidInputError
from .koopman import DEFAULT_TOL_REL, SnapshotDataset, _svd_pinv, pinv
from .observables import Dictionary, lift, lift_jacobian_state, lift_many

Array = np.ndarray


@dataclass(frozen=True)
class CollocationSet:
    """States/inputs sampled over the manifold plus the known field f(xi, u)."""

    states: Array                       # (N, n)
    inputs: Array                       # (N, m)
    known_field: Callable[[Array, Array], Array]

    def __post_init__(self):
        object.__setattr__(self, "states", np.atleast_2d(np.asarray(self.states, dtype=float)))
        ins = np.asarray(self.inputs, dtype=float)
        if ins.ndim == 1:
            ins = ins.reshape(self.states.shape[0], -1)
        object.__setattr__(self, "inputs", ins)
        if self.states.shape[0] == 0:
            raise EmptyDatasetError("collocation set is empty")
        if self.inputs.shape[0] != self.states.shape[0]:
            raise DimensionMismatchError("states and inputs length mismatch")


def sample_collocation(
    field: Callable[[Array, Array], Array],
    state_box: Array,
    input_box: Optional[Array] = None,
    n_points: int = 2000,
    seed: int = 0,
) -> CollocationSet:
    """Uniform sampling over axis-aligned boxes, seeded.

    state_box / input_box: (dim, 2) arrays of [low, high] per coordinate.
    """
    rng = np.random.default_rng(seed)
    state_box = np.atleast_2d(np.asarray(state_box, dtype=float))
    xs = rng.uniform(state_box[:, 0], state_box[:, 1], size=(n_points, state_box.shape[0]))
    if input_box is None:
        us = np.zeros((n_points, 0))
    else:
        input_box = np.atleast_2d(np.asarray(input_box, dtype=float))
        us = rng.uniform(input_box[:, 0], input_box[:, 1], size=(n_points, input_box.shape[0]))
    return CollocationSet(xs, us, field)


@dataclass(frozen=True)
class GeneratorOperator:
    """Continuous-time generator of the known flow and its half-interval step."""

    L: Array
    half_step: Array
    dtau: float
    rank_deficient: bool = False

    @property
    def kappa(self) -> int:
        return self.L.shape[0]


@dataclass(frozen=True)
class ResidualOperator:
    """Discrete operator for the dynamics the known component does not explain."""

    H: Array
    dtau: float

    def __post_init__(self):
        if not np.isfinite(self.H).all():
            raise InvalidInputError("residual operator has non-finite entries")


def _stack(states: Array, inputs: Array) -> Array:
    return np.hstack([states, inputs]) if inputs.size else states


def fit_generator(cs: CollocationSet, dic: Dictionary, dtau: float) -> GeneratorOperator:
    """Regress the generator of the known field on lifted collocation data."""
    n = cs.states.shape[1]
    m = cs.inputs.shape[1]
    if dic.in_dim != n + m:
        raise DimensionMismatchError(
            f"dictionary lifts dim {dic.in_dim}, expected state+input dim {n + m}"
        )
    Z = lift_many(dic, _stack(cs.states, cs.inputs).T)        # (kappa, N)
    D = np.empty_like(Z)
    for i in range(cs.states.shape[0]):
        xi = cs.states[i]
        ui = cs.inputs[i]
        f = np.asarray(cs.known_field(xi, ui), dtype=float)
        if not np.isfinite(f).all():
            raise InvalidInputError(f"known field non-finite at collocation point {i}")
        J = lift_jacobian_state(dic, np.concatenate([xi, ui]))
        D[:, i] = J[:, :n] @ f
    Z_pinv, rank = _svd_pinv(Z, DEFAULT_TOL_REL)
    L = D @ Z_pinv
    half = expm(L * (dtau / 2.0))
    return GeneratorOperator(L, half, dtau, rank_deficient=rank < dic.out_dim)


def fit_residual(
    gen: GeneratorOperator,
    ds: SnapshotDataset,
    dic: Dictionary,
    tol_rel: float = DEFAULT_TOL_REL,
) -> ResidualOperator:
    """Fit H = K^+ Theta(Xp, U) (K Theta(X, U))^+ from trajectory snapshots."""
    if abs(ds.dt - gen.dtau) > 1e-9 * max(1.0, abs(gen.dtau)):
        raise DimensionMismatchError(
            f"snapshot dt {ds.dt} differs from generator dtau {gen.dtau}"
        )
    ThX = lift_many(dic, np.vstack([ds.X, ds.U]))
    ThXp = lift_many(dic, np.vstack([ds.Xp, ds.U]))
    K = gen.half_step
    H = pinv(K, tol_rel) @ ThXp @ pinv(K @ ThX, tol_rel)
    return ResidualOperator(H, gen.dtau)


def predict_composed(
    gen: GeneratorOperator,
    res: ResidualOperator,
    dic: Dictionary,
    chi0: Array,
    us: Optional[Array],
    k: int,
) -> Array:
    """Roll the split predictor forward: per step, apply K H K in lifted space
    (half known flow, residual, half known flow), project, re-lift.

    Returns (k, n) predicted states.  The dictionary must embed the raw
    state-input vector as its leading block so projection is exact.
    """
    if k < 1:
        raise InvalidInputError("need at least one prediction step")
    chi = np.asarray(chi0, dtype=float)
    n = chi.shape[0]
    m = dic.in_dim - n
    if m < 0:
        raise DimensionMismatchError("dictionary input smaller than state dimension")
    if us is None:
        us = np.zeros((k, m))
    us = np.asarray(us, dtype=float).reshape(-1, m) if m else np.zeros((k, 0))
    if us.shape[0] < k:
        raise DimensionMismatchError(f"need {k} inputs, got {us.shape[0]}")
    ri = dic.raw_index
    if ri is None:
        raise InvalidInputError("composed prediction needs a raw-state embedding")
    state_rows = ri[:n]
    out = np.empty((k, n))
    step_op = gen.half_step @ res.H @ gen.half_step
    for i in range(k):
        z = lift(dic, np.concatenate([chi, us[i]]))
        z = step_op @ z
        chi = z[state_rows]
        if not np.isfinite(chi).all():
            raise DivergenceError(i + 1, "composed prediction is non-finite")
        out[i] = chi
    return out
