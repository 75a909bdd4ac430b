"""Relational feature alignment: token projection, grid adaptation, Gram matrices
and the margin-hinge relational loss, each with a hand-written gradient.

Shapes
------
tokens   (B, N, C) with N = T * H * W flattened time-major, then height,
         then width (plain C-order reshape of a (B, T, H, W, C) grid).
grid     (B, T, H, W, C).
gram     (B, N, N).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ShapeMismatchError
from .validation import check_array, check_same_shape

log = logging.getLogger("kinesynth.align")

EPS_NORM = 1e-8
DEFAULT_MARGIN = 0.1
TUBELET = 2


class _ClampCounter:
    """Counts tokens whose norm fell under ``EPS_NORM`` and was clamped."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


norm_clamps = _ClampCounter()


# -- projector ------------------------------------------------------------

def _gelu(x):
    inner = math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def _gelu_grad(x):
    c = math.sqrt(2.0 / math.pi)
    inner = c * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * c * (1.0 + 3 * 0.044715 * x * x)


_ACTIVATIONS = {
    "gelu": (_gelu, _gelu_grad),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(x.dtype)),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "identity": (lambda x: x, np.ones_like),
}


@dataclass
class Projector:
    """Two affine layers with an elementwise nonlinearity, d -> D.

    ``y = act(x @ w1 + b1) @ w2 + b2`` plus ``x`` when ``residual`` (needs
    d == D). With ``w2 = 0, b2 = 0`` and a residual the map is the identity.
    """

    w1: np.ndarray  # (d, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, D)
    b2: np.ndarray  # (D,)
    activation: str = "gelu"
    residual: bool = False

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.w1.shape[1] != self.b1.shape[0] or self.w1.shape[1] != self.w2.shape[0]:
            raise ShapeMismatchError("projector hidden sizes disagree")
        if self.w2.shape[1] != self.b2.shape[0]:
            raise ShapeMismatchError("projector output sizes disagree")
        if self.residual and self.in_dim != self.out_dim:
            raise ShapeMismatchError("residual projector must be square")

    @property
    def in_dim(self):
        return self.w1.shape[0]

    @property
    def out_dim(self):
        return self.w2.shape[1]

    @classmethod
    def random(cls, in_dim, out_dim, hidden=None, activation="gelu", seed=0):
        rng = np.random.default_rng(seed)
        hidden = hidden or max(in_dim, out_dim)
        return cls(
            w1=rng.normal(0, 1 / math.sqrt(in_dim), (in_dim, hidden)),
            b1=np.zeros(hidden),
            w2=rng.normal(0, 1 / math.sqrt(hidden), (hidden, out_dim)),
            b2=np.zeros(out_dim),
            activation=activation,
        )

    @classmethod
    def identity(cls, dim, hidden=None, activation="gelu", seed=0):
        """Square residual projector whose second layer is zero: maps x to x."""
        p = cls.random(dim, dim, hidden, activation, seed)
        p.w2 = np.zeros_like(p.w2)
        p.b2 = np.zeros_like(p.b2)
        p.residual = True
        return p

    def forward(self, x):
        act, _ = _ACTIVATIONS[self.activation]
        pre = x @ self.w1 + self.b1
        y = act(pre) @ self.w2 + self.b2
        if self.residual:
            y = y + x
        return y

    def backward(self, x, grad_out):
        """Gradients of a scalar w.r.t. the input and parameters, given dL/dy."""
        act, dact = _ACTIVATIONS[self.activation]
        pre = x @ self.w1 + self.b1
        h = act(pre)
        flat_h = h.reshape(-1, h.shape[-1])
        flat_g = grad_out.reshape(-1, grad_out.shape[-1])
        g_w2 = flat_h.T @ flat_g
        g_b2 = flat_g.sum(axis=0)
        g_pre = (grad_out @ self.w2.T) * dact(pre)
        flat_pre_g = g_pre.reshape(-1, g_pre.shape[-1])
        g_w1 = x.reshape(-1, x.shape[-1]).T @ flat_pre_g
        g_b1 = flat_pre_g.sum(axis=0)
        g_x = g_pre @ self.w1.T
        if self.residual:
            g_x = g_x + grad_out
        return g_x, {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2}


def project_tokens(tokens, proj: Projector):
    """Apply ``proj`` to every token of a (B, N, d) sequence."""
    tokens = check_array(tokens, ndim=3, name="tokens")
    if tokens.shape[-1] != proj.in_dim:
        raise ShapeMismatchError(
            f"token channels {tokens.shape[-1]} != projector input {proj.in_dim}")
    return proj.forward(tokens)


# -- grid adaptation ------------------------------------------------------

def interp_matrix(n_src, n_tgt):
    """Align-corners linear interpolation weights, shape (n_tgt, n_src).

    Target index ``i`` samples source coordinate ``i (n_src - 1) / (n_tgt - 1)``;
    a size-1 source is broadcast and a size-1 target samples index 0.
    """
    if n_src < 1 or n_tgt < 1:
        raise ValueError("axis sizes must be >= 1")
    m = np.zeros((n_tgt, n_src))
    if n_src == 1:
        m[:, 0] = 1.0
        return m
    scale = (n_src - 1) / (n_tgt - 1) if n_tgt > 1 else 0.0
    for i in range(n_tgt):
        x = i * scale
        lo = min(int(math.floor(x)), n_src - 2)
        frac = x - lo
        m[i, lo] += 1.0 - frac
        m[i, lo + 1] += frac
    return m


def tokens_to_grid(tokens, source_grid):
    t, h, w = source_grid
    b, n, c = tokens.shape
    if n != t * h * w:
        raise ShapeMismatchError(f"{n} tokens do not fill a {t}x{h}x{w} grid")
    return tokens.reshape(b, t, h, w, c)


def grid_to_tokens(grid):
    b, t, h, w, c = grid.shape
    return grid.reshape(b, t * h * w, c)


def grid_adapt(tokens, source_grid, target_grid):
    """Trilinear (align-corners) resampling of a token grid, no parameters.

    ``tokens`` is (B, T*H*W, D) with ``source_grid = (T, H, W)``; returns the
    (B, t_g, h_g, w_g, D) grid.
    """
    tokens = check_array(tokens, ndim=3, name="tokens")
    if min(target_grid) < 1:
        raise ValueError(f"target grid {target_grid} has an axis < 1")
    grid = tokens_to_grid(tokens, source_grid)
    mt, mh, mw = (interp_matrix(s, g) for s, g in zip(source_grid, target_grid))
    return np.einsum("it,jh,kw,bthwc->bijkc", mt, mh, mw, grid, optimize=True)


def grid_adapt_backward(grad_grid, source_grid, target_grid):
    """Adjoint of :func:`grid_adapt`: maps dL/d(output grid) to dL/d(tokens)."""
    mt, mh, mw = (interp_matrix(s, g) for s, g in zip(source_grid, target_grid))
    g = np.einsum("it,jh,kw,bijkc->bthwc", mt, mh, mw, grad_grid, optimize=True)
    return grid_to_tokens(g)


def truncate_to_tubelet(x, tubelet=TUBELET, axis=1):
    """Drop trailing frames so the time axis is a multiple of ``tubelet``."""
    n = x.shape[axis]
    keep = n - n % tubelet
    if keep < 1:
        raise ValueError(f"time axis of {n} frames is shorter than the tubelet {tubelet}")
    return np.take(x, np.arange(keep), axis=axis)


# -- Gram matrices and the relational loss --------------------------------

def _as_tokens(features):
    features = np.asarray(features, dtype=float)
    if features.ndim == 5:
        return grid_to_tokens(features)
    if features.ndim == 3:
        return features
    raise ShapeMismatchError(f"features must be a 5-D grid or 3-D tokens, got {features.shape}")


def _normalize(tokens):
    norms = np.linalg.norm(tokens, axis=-1, keepdims=True)
    small = norms < EPS_NORM
    if small.any():
        norm_clamps.count += int(small.sum())
        log.warning("clamped %d token norms below %.0e", int(small.sum()), EPS_NORM)
    safe = np.maximum(norms, EPS_NORM)
    return tokens / safe, safe, small


def gram(features):
    """Per-batch cosine-similarity matrix of all spatio-temporal tokens (B, N, N)."""
    tokens = _as_tokens(check_array(features, name="features"))
    unit, _, _ = _normalize(tokens)
    g = unit @ unit.transpose(0, 2, 1)
    return 0.5 * (g + g.transpose(0, 2, 1))


def phys_loss(student, teacher, margin=DEFAULT_MARGIN):
    """Margin-hinge L1 between student and teacher Gram matrices.

    ``L = mean_b (1/N^2) sum_ij max(0, |G_S - G_T| - margin)``. Returns
    ``(loss, dL/d student)`` with the gradient in the student's shape. The
    hinge kink contributes a zero subgradient.
    """
    student = check_array(student, name="student")
    teacher = check_array(teacher, name="teacher")
    check_same_shape(student, teacher, ("student", "teacher"))
    if margin < 0:
        raise ValueError("margin must be >= 0")
    s_tok = _as_tokens(student)
    unit, norms, small = _normalize(s_tok)
    gs = unit @ unit.transpose(0, 2, 1)
    gt = gram(teacher)
    diff = gs - gt
    excess = np.abs(diff) - margin
    active = excess > 0
    b, n, _ = gs.shape
    loss = float(np.sum(np.where(active, excess, 0.0)) / (b * n * n))

    gamma = np.where(active, np.sign(diff), 0.0) / (b * n * n)
    g_unit = (gamma + gamma.transpose(0, 2, 1)) @ unit
    radial = np.sum(g_unit * unit, axis=-1, keepdims=True)
    g_tok = np.where(small, g_unit, g_unit - radial * unit) / norms
    return loss, g_tok.reshape(student.shape)


def alignment_loss(hidden, source_grid, proj: Projector, teacher, margin=DEFAULT_MARGIN):
    """Project hidden tokens, adapt them to the teacher grid and score them.

    Returns ``(loss, dL/d hidden, parameter gradients)``.
    """
    y = project_tokens(hidden, proj)
    target = teacher.shape[1:4]
    grid = grid_adapt(y, source_grid, target)
    loss, g_grid = phys_loss(grid, teacher, margin)
    g_y = grid_adapt_backward(g_grid, source_grid, target)
    g_hidden, g_params = proj.backward(hidden, g_y)
    return loss, g_hidden, g_params


# -- estimator wrappers ---------------------------------------------------

class GridAdapter(TransformerMixin, BaseEstimator):
    """Stateless transformer from (B, N, D) tokens to a (B, t, h, w, D) grid."""

    def __init__(self, source_grid=(1, 1, 1), target_grid=(1, 1, 1)):
        self.source_grid = source_grid
        self.target_grid = target_grid

    def fit(self, X=None, y=None):
        if min(self.target_grid) < 1 or min(self.source_grid) < 1:
            raise ValueError("grid sizes must be >= 1")
        self.n_source_tokens_ = int(np.prod(self.source_grid))
        return self

    def transform(self, X):
        check_is_fitted(self, "n_source_tokens_")
        return grid_adapt(X, tuple(self.source_grid), tuple(self.target_grid))

    def inverse_gradient(self, grad_grid):
        return grid_adapt_backward(grad_grid, tuple(self.source_grid), tuple(self.target_grid))


class TokenProjector(TransformerMixin, BaseEstimator):
    """Projector as a transformer; ``fit`` only initializes weights from X's width.

    Training the projector belongs to the surrounding training loop, so
    ``fit`` does no optimization.
    """

    def __init__(self, out_dim=None, hidden_dim=None, activation="gelu", identity=False,
                 random_state=0):
        self.out_dim = out_dim
        self.hidden_dim = hidden_dim
        self.activation = activation
        self.identity = identity
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, ndim=3, name="tokens")
        d = X.shape[-1]
        if self.identity:
            self.projector_ = Projector.identity(d, self.hidden_dim, self.activation, self.random_state)
        else:
            self.projector_ = Projector.random(d, self.out_dim or d, self.hidden_dim,
                                               self.activation, self.random_state)
        return self

    def transform(self, X):
        check_is_fitted(self, "projector_")
        return project_tokens(X, self.projector_)


class GramAligner(BaseEstimator):
    """Holds teacher features; ``score`` returns the negated relational loss."""

    def __init__(self, margin=DEFAULT_MARGIN):
        self.margin = margin

    def fit(self, teacher, y=None):
        self.teacher_ = check_array(teacher, ndim=5, name="teacher")
        self.teacher_gram_ = gram(self.teacher_)
        return self

    def loss(self, student):
        check_is_fitted(self, "teacher_")
        return phys_loss(student, self.teacher_, self.margin)

    def score(self, student, y=None):
        return -self.loss(student)[0]
