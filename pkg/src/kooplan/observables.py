"""Observable dictionaries: the lifting map phi from state space to feature space.

A dictionary maps a state chi in R^in_dim to a feature vector in R^out_dim in
which the dynamics are approximately linear.  Every fixed basis here embeds the
raw state as its leading block, so the decoding projection that recovers chi
from the lifted vector is an exact row selection, never a regression.

Supported kinds:
  identity    phi(x) = x                          (optionally + constant 1)
  polynomial  [x, monomials of degree 2..d]
  rbf         [x, exp(-|x - c_j|^2 / (2 w^2))]
  fourier     [x, 1, cos/sin harmonics per coordinate]
  trained     [x, f_theta(x)] with f_theta a small tanh MLP
  composite   [x_r, gamma_r(x_r), x_w, gamma_w(x_w)] built from two parts
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.cluster.vq import kmeans2

from .errors import (
    DimensionMismatchError,
    InvalidInputError,
    UnsupportedOperationError,
)

Array = np.ndarray


# ---------------------------------------------------------------------------
# Trainable encoder (tanh hidden layers, linear output)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncoderParams:
    """Weights of a fully connected network: tanh hidden layers, linear head.

    layers: tuple of (W, b) with W of shape (fan_out, fan_in), b of shape
    (fan_out,).  Consecutive layer dimensions must chain.
    """

    layers: Tuple[Tuple[Array, Array], ...]

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("encoder needs at least one layer")
        prev = None
        for i, (W, b) in enumerate(self.layers):
            if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
                raise DimensionMismatchError(f"layer {i}: W {W.shape} vs b {b.shape}")
            if prev is not None and W.shape[1] != prev:
                raise DimensionMismatchError(
                    f"layer {i}: fan_in {W.shape[1]} != previous fan_out {prev}"
                )
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise InvalidInputError(f"layer {i}: non-finite parameters")
            prev = W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]


def init_encoder(dims: Sequence[int], seed: int = 0, out_scale: float = 1.0) -> EncoderParams:
    """Glorot-uniform initialization, U(+-sqrt(6/(fan_in+fan_out))), seeded.

    out_scale rescales the final layer (0.0 gives a zero-output head, which is
    handy when features should start inert).
    """
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        limit = np.sqrt(6.0 / (fi + fo))
        W = rng.uniform(-limit, limit, size=(fo, fi))
        if i == len(dims) - 2:
            W = W * out_scale
        layers.append((W, np.zeros(fo)))
    return EncoderParams(tuple(layers))


def encode(params: EncoderParams, x: Array) -> Array:
    """Forward pass.  x is (in_dim,) or (N, in_dim); output matches."""
    single = x.ndim == 1
    h = np.atleast_2d(x).astype(float)
    n_layers = len(params.layers)
    for i, (W, b) in enumerate(params.layers):
        h = h @ W.T + b
        if i < n_layers - 1:
            h = np.tanh(h)
    return h[0] if single else h


def encode_with_cache(params: EncoderParams, x: Array):
    """Forward pass keeping the per-layer inputs needed for the backward pass."""
    single = x.ndim == 1
    h = np.atleast_2d(x).astype(float)
    inputs = []
    n_layers = len(params.layers)
    for i, (W, b) in enumerate(params.layers):
        inputs.append(h)
        h = h @ W.T + b
        if i < n_layers - 1:
            h = np.tanh(h)
    cache = (inputs, h)
    return (h[0] if single else h), cache


def encoder_vjp(params: EncoderParams, cache, gy: Array):
    """Reverse-mode pass: contract upstream gradient gy with the network Jacobian.

    Returns (grads, gx): grads is a tuple of (dW, db) per layer summed over the
    batch; gx holds per-row gradients with respect to the inputs.
    """
    inputs, _ = cache
    g = np.atleast_2d(gy).astype(float)
    n_layers = len(params.layers)
    grads: list = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        W, b = params.layers[i]
        h_in = inputs[i]
        grads[i] = (g.T @ h_in, g.sum(axis=0))
        g = g @ W
        if i > 0:
            act = inputs[i]  # tanh output feeding layer i
            g = g * (1.0 - act * act)
    return tuple(grads), g


def encoder_input_jacobian(params: EncoderParams, x: Array) -> Array:
    """Jacobian d f_theta / d x at a single input, shape (out_dim, in_dim)."""
    h = np.asarray(x, dtype=float)
    n_layers = len(params.layers)
    J = np.eye(params.in_dim)
    for i, (W, b) in enumerate(params.layers):
        J = W @ J
        h = W @ h + b
        if i < n_layers - 1:
            h = np.tanh(h)
            J = (1.0 - h * h)[:, None] * J
    return J


def sgd_step(params: EncoderParams, grads, lr: float) -> EncoderParams:
    """One plain gradient-descent update, returning new parameters."""
    layers = tuple(
        (W - lr * dW, b - lr * db)
        for (W, b), (dW, db) in zip(params.layers, grads)
    )
    return EncoderParams(layers)


# ---------------------------------------------------------------------------
# Dictionary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dictionary:
    """A deterministic observable map with optional trainable parameters.

    The raw state occupies known rows of the output (`raw_index`), which makes
    the inverse lift an exact selection.  Instances are immutable; evaluating
    `lift` twice on the same input is bit-identical.
    """

    kind: str
    in_dim: int
    out_dim: int
    leading_block: bool
    degree: int = 0
    centers: Optional[Array] = None          # rbf: (k, in_dim)
    width: float = 0.0                       # rbf
    frequencies: Optional[Array] = None      # fourier: (in_dim,) base angular freq
    offsets: Optional[Array] = None          # fourier: (in_dim,) phase origin
    harmonics: int = 0                       # fourier
    constant: bool = False                   # append a constant-1 feature
    encoder: Optional[EncoderParams] = None  # trained
    parts: Optional[Tuple["Dictionary", "Dictionary"]] = None  # composite
    split: int = 0                           # composite: dimension of the first part

    def __post_init__(self):
        if self.leading_block and self.out_dim < self.in_dim:
            raise DimensionMismatchError(
                f"leading block requires out_dim >= in_dim ({self.out_dim} < {self.in_dim})"
            )

    @property
    def raw_index(self) -> Optional[Array]:
        """Rows of the lifted vector holding the raw state, in state order."""
        if self.kind == "composite":
            dr, dw = self.parts
            ir, iw = dr.raw_index, dw.raw_index
            if ir is None or iw is None:
                return None
            return np.concatenate([ir, iw + dr.out_dim])
        if self.leading_block:
            return np.arange(self.in_dim)
        return None

    def describe(self) -> str:
        """Stable short identifier used to tag fitted operators."""
        if self.kind == "identity":
            core = f"identity({self.in_dim}"
        elif self.kind == "polynomial":
            core = f"polynomial({self.in_dim},deg={self.degree}"
        elif self.kind == "rbf":
            core = f"rbf({self.in_dim},k={len(self.centers)},w={self.width:.6g}"
        elif self.kind == "fourier":
            core = f"fourier({self.in_dim},h={self.harmonics}"
        elif self.kind == "trained":
            dims = [self.encoder.in_dim] + [W.shape[0] for W, _ in self.encoder.layers]
            core = f"trained({'x'.join(map(str, dims))}"
        elif self.kind == "composite":
            return f"composite[{self.parts[0].describe()};{self.parts[1].describe()}]"
        else:
            core = f"{self.kind}({self.in_dim}"
        if self.constant:
            core += ",const"
        return core + ")"


# -- factories --------------------------------------------------------------

def identity_dictionary(in_dim: int, constant: bool = False) -> Dictionary:
    return Dictionary(
        kind="identity",
        in_dim=in_dim,
        out_dim=in_dim + (1 if constant else 0),
        leading_block=True,
        constant=constant,
    )


def _monomial_exponents(in_dim: int, degree: int):
    """Multi-indices of total degree 2..degree, in deterministic order."""
    exps = []
    for d in range(2, degree + 1):
        for combo in itertools.combinations_with_replacement(range(in_dim), d):
            e = np.zeros(in_dim, dtype=int)
            for idx in combo:
                e[idx] += 1
            exps.append(e)
    return exps


def polynomial_dictionary(in_dim: int, degree: int, constant: bool = False) -> Dictionary:
    """Leading block plus all monomials of total degree 2..degree."""
    if degree < 1:
        raise InvalidInputError("polynomial degree must be >= 1")
    n_extra = len(_monomial_exponents(in_dim, degree))
    return Dictionary(
        kind="polynomial",
        in_dim=in_dim,
        out_dim=in_dim + n_extra + (1 if constant else 0),
        leading_block=True,
        degree=degree,
        constant=constant,
    )


def rbf_dictionary(centers: Array, width: float, constant: bool = False) -> Dictionary:
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if width <= 0:
        raise InvalidInputError("rbf width must be positive")
    in_dim = centers.shape[1]
    return Dictionary(
        kind="rbf",
        in_dim=in_dim,
        out_dim=in_dim + centers.shape[0] + (1 if constant else 0),
        leading_block=True,
        centers=centers,
        width=float(width),
        constant=constant,
    )


def rbf_dictionary_from_data(
    states: Array, k: int = 100, seed: int = 0, constant: bool = False
) -> Dictionary:
    """RBF basis with k-means centers and width = median pairwise center distance.

    states: (N, in_dim) sample of training states.  Center selection adapts the
    basis to the data's scale, so no separate input standardization is needed.
    """
    states = np.asarray(states, dtype=float)
    k = min(k, states.shape[0])
    rng = np.random.default_rng(seed)
    centers, _ = kmeans2(states, k, minit="++", seed=rng)
    if k > 1:
        diffs = centers[:, None, :] - centers[None, :, :]
        dists = np.sqrt((diffs ** 2).sum(-1))
        width = float(np.median(dists[np.triu_indices(k, 1)]))
    else:
        width = float(np.std(states)) or 1.0
    if width <= 0:
        width = 1.0
    return rbf_dictionary(centers, width, constant=constant)


def fourier_dictionary(
    in_dim: int,
    frequencies: Array,
    harmonics: int = 4,
    offsets: Optional[Array] = None,
    constant: bool = True,
) -> Dictionary:
    """Per-coordinate cos/sin features at integer multiples of a base frequency."""
    freqs = np.asarray(frequencies, dtype=float).reshape(in_dim)
    offs = np.zeros(in_dim) if offsets is None else np.asarray(offsets, dtype=float).reshape(in_dim)
    if harmonics < 1:
        raise InvalidInputError("need at least one harmonic")
    return Dictionary(
        kind="fourier",
        in_dim=in_dim,
        out_dim=in_dim + 2 * harmonics * in_dim + (1 if constant else 0),
        leading_block=True,
        frequencies=freqs,
        offsets=offs,
        harmonics=harmonics,
        constant=constant,
    )


def fourier_dictionary_from_data(
    states: Array, harmonics: int = 4, constant: bool = True
) -> Dictionary:
    """Base frequency per coordinate chosen so the first harmonic spans the
    observed data range (half period across the range).  Degenerate (constant)
    coordinates fall back to unit frequency."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    lo = states.min(axis=0)
    hi = states.max(axis=0)
    span = hi - lo
    span[span <= 0] = 1.0
    freqs = np.pi / span
    return fourier_dictionary(states.shape[1], freqs, harmonics, offsets=lo, constant=constant)


def trained_dictionary(encoder: EncoderParams, leading_block: bool = True) -> Dictionary:
    in_dim = encoder.in_dim
    out_dim = encoder.out_dim + (in_dim if leading_block else 0)
    return Dictionary(
        kind="trained",
        in_dim=in_dim,
        out_dim=out_dim,
        leading_block=leading_block,
        encoder=encoder,
    )


def compose_composite(dr: Dictionary, dw: Dictionary) -> Dictionary:
    """Stack two dictionaries over a partitioned state [x_r; x_w].

    The output keeps the block order [x_r, gamma_r(x_r), x_w, gamma_w(x_w)], so
    the first dr.in_dim rows are exactly x_r and a plain [I 0] row selection
    recovers the robot part.
    """
    in_dim = dr.in_dim + dw.in_dim
    out_dim = dr.out_dim + dw.out_dim
    d = Dictionary(
        kind="composite",
        in_dim=in_dim,
        out_dim=out_dim,
        leading_block=False,
        parts=(dr, dw),
        split=dr.in_dim,
    )
    ri = d.raw_index
    lead = ri is not None and len(ri) == in_dim and bool((ri == np.arange(in_dim)).all())
    return Dictionary(
        kind="composite",
        in_dim=in_dim,
        out_dim=out_dim,
        leading_block=lead,
        parts=(dr, dw),
        split=dr.in_dim,
    )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _check_dim(d: Dictionary, rows: int):
    if rows != d.in_dim:
        raise DimensionMismatchError(f"dictionary expects dim {d.in_dim}, got {rows}")


def lift_many(d: Dictionary, X: Array) -> Array:
    """Lift a column-stacked batch: X (in_dim, N) -> (out_dim, N)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatchError("lift_many expects a 2-D column-stacked array")
    _check_dim(d, X.shape[0])
    N = X.shape[1]

    if d.kind == "composite":
        dr, dw = d.parts
        return np.vstack([lift_many(dr, X[: d.split]), lift_many(dw, X[d.split:])])

    blocks = [X] if d.leading_block else []
    if d.kind == "identity":
        pass
    elif d.kind == "polynomial":
        for e in _monomial_exponents(d.in_dim, d.degree):
            blocks.append(np.prod(X ** e[:, None], axis=0, keepdims=True))
    elif d.kind == "rbf":
        # squared distances to centers, (k, N)
        diff = d.centers[:, :, None] - X[None, :, :]
        sq = (diff ** 2).sum(axis=1)
        blocks.append(np.exp(-sq / (2.0 * d.width ** 2)))
    elif d.kind == "fourier":
        ang = (X - d.offsets[:, None]) * d.frequencies[:, None]
        for i in range(d.in_dim):
            for h in range(1, d.harmonics + 1):
                blocks.append(np.cos(h * ang[i])[None, :])
                blocks.append(np.sin(h * ang[i])[None, :])
    elif d.kind == "trained":
        blocks.append(encode(d.encoder, X.T).T)
    else:
        raise UnsupportedOperationError(f"unknown dictionary kind {d.kind!r}")

    if d.constant:
        blocks.append(np.ones((1, N)))
    out = np.vstack(blocks) if blocks else np.empty((0, N))
    if out.shape[0] != d.out_dim:
        raise DimensionMismatchError(
            f"dictionary produced {out.shape[0]} features, declared {d.out_dim}"
        )
    return out


def lift(d: Dictionary, chi: Array) -> Array:
    """Lift a single state vector (in_dim,) -> (out_dim,)."""
    chi = np.asarray(chi, dtype=float)
    if chi.ndim != 1:
        raise DimensionMismatchError("lift expects a 1-D state vector")
    return lift_many(d, chi[:, None])[:, 0]


def lift_jacobian_state(d: Dictionary, chi: Array) -> Array:
    """Jacobian d phi / d chi at a single state, shape (out_dim, in_dim)."""
    chi = np.asarray(chi, dtype=float)
    _check_dim(d, chi.shape[0])

    if d.kind == "composite":
        dr, dw = d.parts
        J = np.zeros((d.out_dim, d.in_dim))
        J[: dr.out_dim, : d.split] = lift_jacobian_state(dr, chi[: d.split])
        J[dr.out_dim:, d.split:] = lift_jacobian_state(dw, chi[d.split:])
        return J

    rows = [np.eye(d.in_dim)] if d.leading_block else []
    if d.kind == "identity":
        pass
    elif d.kind == "polynomial":
        for e in _monomial_exponents(d.in_dim, d.degree):
            grad = np.zeros(d.in_dim)
            for j in range(d.in_dim):
                if e[j] > 0:
                    e2 = e.copy()
                    e2[j] -= 1
                    grad[j] = e[j] * np.prod(chi ** e2)
            rows.append(grad[None, :])
    elif d.kind == "rbf":
        diff = d.centers - chi[None, :]
        g = np.exp(-(diff ** 2).sum(axis=1) / (2.0 * d.width ** 2))
        rows.append(g[:, None] * diff / d.width ** 2)
    elif d.kind == "fourier":
        ang = (chi - d.offsets) * d.frequencies
        for i in range(d.in_dim):
            for h in range(1, d.harmonics + 1):
                gc = np.zeros(d.in_dim)
                gs = np.zeros(d.in_dim)
                gc[i] = -h * d.frequencies[i] * np.sin(h * ang[i])
                gs[i] = h * d.frequencies[i] * np.cos(h * ang[i])
                rows.append(gc[None, :])
                rows.append(gs[None, :])
    elif d.kind == "trained":
        rows.append(encoder_input_jacobian(d.encoder, chi))
    else:
        raise UnsupportedOperationError(f"unknown dictionary kind {d.kind!r}")

    if d.constant:
        rows.append(np.zeros((1, d.in_dim)))
    return np.vstack(rows) if rows else np.empty((0, d.in_dim))


def lift_jacobian_params(d: Dictionary, chi: Array):
    """Parameter gradients of the lift at one state, for trained dictionaries.

    Returns a tuple of (dW, db) per encoder layer where dW has shape
    (out_dim, *W.shape) and db has shape (out_dim, *b.shape): row r holds the
    gradient of lifted output r with respect to that layer's parameters.
    Leading-block rows are identically zero since they copy the raw state.
    """
    if d.kind != "trained":
        raise UnsupportedOperationError(
            f"parameter gradients are only defined for trained dictionaries, not {d.kind!r}"
        )
    chi = np.asarray(chi, dtype=float)
    _check_dim(d, chi.shape[0])
    enc = d.encoder
    offset = d.in_dim if d.leading_block else 0
    _, cache = encode_with_cache(enc, chi)
    out = []
    for W, b in enc.layers:
        out.append((np.zeros((d.out_dim,) + W.shape), np.zeros((d.out_dim,) + b.shape)))
    for r in range(enc.out_dim):
        gy = np.zeros(enc.out_dim)
        gy[r] = 1.0
        grads, _ = encoder_vjp(enc, cache, gy)
        for li, (dW, db) in enumerate(grads):
            out[li][0][offset + r] = dW
            out[li][1][offset + r] = db
    return tuple(out)
