"""Central finite-difference checks for the hand-written loss gradients.

Fixtures are small random tensors resampled until every L1 / hinge residual
sits at least ``KINK_GAP`` away from its kink, so a step of ``h`` never
crosses one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align import DEFAULT_MARGIN, gram, phys_loss
from .depth import latent_loss, pixel_loss, structure_loss, temporal_loss

STEP = 1e-6
KINK_GAP = 1e-4
TOLERANCE = 1e-4
LOSSES = ("phys", "latent", "pixel", "structure", "temporal")


def numerical_grad(fn, x, h=STEP):
    """Central differences of scalar ``fn`` at every entry of ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn(x)
        flat[i] = old - h
        down = fn(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def relative_error(analytic, numeric):
    """Max-abs error over the larger of the two max-abs gradient entries."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


@dataclass
class GradCheck:
    loss: str
    trials: int
    max_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self):
        return self.max_error <= self.tolerance

    def to_dict(self):
        return {"loss": self.loss, "trials": self.trials, "max_relative_error": self.max_error,
                "tolerance": self.tolerance, "passed": self.passed}


def _min_gap_phys(student, teacher, margin):
    diff = gram(student) - gram(teacher)
    return float(np.abs(np.abs(diff) - margin).min())


def phys_fixture(rng, margin=DEFAULT_MARGIN):
    """Student/teacher grids with at most 27 tokens and no hinge near its kink."""
    while True:
        t, h, w = (int(v) for v in rng.integers(1, 4, size=3))
        c = int(rng.integers(2, 6))
        shape = (int(rng.integers(1, 3)), t, h, w, c)
        teacher = rng.normal(size=shape)
        student = teacher + rng.normal(scale=0.5, size=shape)
        if _min_gap_phys(student, teacher, margin) > KINK_GAP:
            return student, teacher


def depth_fixture(rng, kind):
    """(pred, target) maps of shape at most 2x1x4x6x6, kink-free for L1 terms."""
    while True:
        shape = (int(rng.integers(1, 3)), 1, int(rng.integers(2, 5)),
                 int(rng.integers(2, 7)), int(rng.integers(2, 7)))
        target = rng.uniform(1.0, 5.0, size=shape)
        pred = target + rng.normal(scale=0.3, size=shape)
        if kind == "structure":
            gaps = [np.abs(np.diff(pred, axis=a) - np.diff(target, axis=a)).min() for a in (3, 4)]
            if min(gaps) <= KINK_GAP:
                continue
        if kind == "temporal":
            if np.abs(np.diff(pred, axis=2) - np.diff(target, axis=2)).min() <= KINK_GAP:
                continue
        return pred, target


def latent_fixture(rng):
    shape = tuple(int(v) for v in rng.integers(1, 4, size=5))
    return rng.normal(size=shape), rng.normal(size=shape)


def check_loss(name, trials=20, seed=0, h=STEP):
    """Worst relative error of ``name`` over ``trials`` random fixtures."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        if name == "phys":
            s, t = phys_fixture(rng)
            fn = lambda x, t=t: phys_loss(x, t)[0]  # noqa: E731
        elif name == "latent":
            s, t = latent_fixture(rng)
            fn = lambda x, t=t: latent_loss(x, t)[0]  # noqa: E731
        elif name in ("pixel", "structure", "temporal"):
            s, t = depth_fixture(rng, name)
            loss = {"pixel": pixel_loss, "structure": structure_loss, "temporal": temporal_loss}[name]
            fn = lambda x, t=t, loss=loss: loss(x, t)[0]  # noqa: E731
        else:
            raise ValueError(f"unknown loss {name!r}; choose from {LOSSES}")
        analytic = {"phys": phys_loss, "latent": latent_loss, "pixel": pixel_loss,
                    "structure": structure_loss, "temporal": temporal_loss}[name](s, t)[1]
        worst = max(worst, relative_error(analytic, numerical_grad(fn, s, h)))
    return GradCheck(name, trials, worst)


def check_all(trials=20, seed=0, losses=LOSSES):
    return [check_loss(name, trials, seed + k) for k, name in enumerate(losses)]
