"""Depth supervision losses with analytic gradients.

Latent tensors are (B, C, T, H, W); depth maps are (B, 1, T, H, W) in metres.
Every loss returns ``(value, dL/d pred)``; targets are treated as constants.
L1 kinks take a zero subgradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InsufficientFramesError, ShapeMismatchError
from .validation import check_array, check_same_shape

DEFAULT_BETA = (1.0, 1.0, 0.5, 0.5)  # latent, pixel, structure, temporal
VAR_EPS = 1e-12


def _pair(pred, target, ndim=5, names=("pred", "target")):
    pred = check_array(pred, ndim=ndim, name=names[0])
    target = check_array(target, ndim=ndim, name=names[1])
    check_same_shape(pred, target, names)
    return pred, target


def _depth_pair(pred, target):
    pred, target = _pair(pred, target)
    if pred.shape[1] != 1:
        raise ShapeMismatchError(f"depth maps need a singleton channel axis, got {pred.shape}")
    return pred, target


def latent_loss(pred, target):
    """Mean squared error over all B*C*T*H*W entries."""
    pred, target = _pair(pred, target)
    r = pred - target
    return float(np.mean(r * r)), 2.0 * r / r.size


@dataclass
class SSIFit:
    scale: float
    shift: float
    degenerate: bool = False


def ssi_fit(pred_frame, target_frame):
    """Least-squares ``(s, t)`` minimising ``sum (s * pred + t - target)^2``.

    A constant prediction (variance below 1e-12) gives ``s = 0`` and
    ``t = mean(target)`` with the degenerate flag set.
    """
    p = np.asarray(pred_frame, dtype=float).ravel()
    d = np.asarray(target_frame, dtype=float).ravel()
    if p.size != d.size:
        raise ShapeMismatchError("frames differ in size")
    if p.size < 2:
        raise ValueError("a frame needs at least 2 pixels")
    pm, dm = p.mean(), d.mean()
    pc = p - pm
    var = np.mean(pc * pc)
    if var < VAR_EPS:
        return SSIFit(0.0, float(dm), True)
    s = float(np.mean(pc * (d - dm)) / var)
    return SSIFit(s, float(dm - s * pm), False)


def ssi_fit_frames(pred, target):
    """Vectorized per-frame fit; returns (scale, shift, degenerate), each (B, T)."""
    b, _, t = pred.shape[:3]
    p = pred.reshape(b, t, -1)
    d = target.reshape(b, t, -1)
    pm = p.mean(axis=-1, keepdims=True)
    dm = d.mean(axis=-1, keepdims=True)
    pc = p - pm
    var = np.mean(pc * pc, axis=-1)
    cov = np.mean(pc * (d - dm), axis=-1)
    degenerate = var < VAR_EPS
    scale = np.where(degenerate, 0.0, cov / np.where(degenerate, 1.0, var))
    shift = dm[..., 0] - scale * pm[..., 0]
    return scale, shift, degenerate


def pixel_loss(pred, target):
    """Mean over frames of the MSE left after each frame's optimal affine fit.

    The gradient holds ``(s, t)`` at their optimum (envelope theorem), which is
    exact for the minimised objective.
    """
    pred, target = _depth_pair(pred, target)
    b, _, t, h, w = pred.shape
    scale, shift, _ = ssi_fit_frames(pred, target)
    s = scale[:, None, :, None, None]
    r = s * pred + shift[:, None, :, None, None] - target
    per_frame = np.mean(r * r, axis=(1, 3, 4))
    loss = float(np.mean(per_frame))
    grad = 2.0 * s * r / (b * t * h * w)
    return loss, grad


def _l1_diff(dp, dt):
    r = dp - dt
    return np.abs(r), np.sign(r)


def structure_loss(pred, target):
    """L1 match of forward spatial differences, divided by B*T*H*W."""
    pred, target = _depth_pair(pred, target)
    b, _, t, h, w = pred.shape
    if h < 2 or w < 2:
        raise ShapeMismatchError("structure loss needs H, W >= 2")
    n = b * t * h * w
    ax, sx = _l1_diff(np.diff(pred, axis=4), np.diff(target, axis=4))
    ay, sy = _l1_diff(np.diff(pred, axis=3), np.diff(target, axis=3))
    loss = float((ax.sum() + ay.sum()) / n)
    grad = np.zeros_like(pred)
    grad[..., :, 1:] += sx
    grad[..., :, :-1] -= sx
    grad[..., 1:, :] += sy
    grad[..., :-1, :] -= sy
    return loss, grad / n


def temporal_loss(pred, target):
    """L1 match of frame-to-frame changes, divided by B*(T-1)*H*W."""
    pred, target = _depth_pair(pred, target)
    b, _, t, h, w = pred.shape
    if t < 2:
        raise InsufficientFramesError("temporal loss needs T >= 2")
    n = b * (t - 1) * h * w
    a, sg = _l1_diff(np.diff(pred, axis=2), np.diff(target, axis=2))
    grad = np.zeros_like(pred)
    grad[:, :, 1:] += sg
    grad[:, :, :-1] -= sg
    return float(a.sum() / n), grad / n


@dataclass
class DepthObjective:
    total: float
    latent: float
    pixel: float
    structure: float
    temporal: float
    grad_latent: np.ndarray
    grad_depth: np.ndarray

    def components(self):
        return {"latent": self.latent, "pixel": self.pixel,
                "structure": self.structure, "temporal": self.temporal}


def depth_objective(pred_latent, target_latent, pred_depth, target_depth, beta=DEFAULT_BETA):
    """Weighted sum of the four depth terms and its gradients."""
    beta = tuple(float(b) for b in beta)
    if len(beta) != 4 or min(beta) < 0:
        raise ValueError("beta needs four non-negative weights")
    bl, bp, bs, bt = beta
    ll, gl = latent_loss(pred_latent, target_latent)
    lp, gp = pixel_loss(pred_depth, target_depth)
    ls, gs = structure_loss(pred_depth, target_depth)
    lt, gt = temporal_loss(pred_depth, target_depth)
    return DepthObjective(
        total=bl * ll + bp * lp + bs * ls + bt * lt,
        latent=ll, pixel=lp, structure=ls, temporal=lt,
        grad_latent=bl * gl,
        grad_depth=bp * gp + bs * gs + bt * gt,
    )


class ScaleShiftAligner(TransformerMixin, BaseEstimator):
    """Fits per-frame scale/shift from predictions to targets; ``transform`` applies them."""

    def fit(self, X, y):
        X, y = _depth_pair(X, y)
        self.scale_, self.shift_, self.degenerate_ = ssi_fit_frames(X, y)
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_array(X, ndim=5, name="pred")
        if X.shape[0] != self.scale_.shape[0] or X.shape[2] != self.scale_.shape[1]:
            raise ShapeMismatchError("batch/time axes differ from the fitted maps")
        return self.scale_[:, None, :, None, None] * X + self.shift_[:, None, :, None, None]

    def score(self, X, y):
        """Negated scale-and-shift-invariant MSE."""
        return -pixel_loss(X, y)[0]
