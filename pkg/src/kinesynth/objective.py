"""Total training objective: generative loss plus the two alignment terms."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

from .align import DEFAULT_MARGIN, phys_loss
from .depth import DEFAULT_BETA, depth_objective

log = logging.getLogger("kinesynth.objective")


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda_phys: float = 0.25
    lambda_3d: float = 1.0
    margin: float = DEFAULT_MARGIN
    beta: tuple = DEFAULT_BETA

    def __post_init__(self):
        vals = (self.lambda_phys, self.lambda_3d, self.margin, *self.beta)
        if len(self.beta) != 4 or any(not (v >= 0) for v in vals):
            raise ValueError("objective weights must all be >= 0 (beta has four entries)")


@dataclass
class ObjectiveResult:
    total: float
    l_fm: float
    l_phys: float
    l_3d: float
    depth_components: dict = field(default_factory=dict)
    grad_student: Optional[object] = None
    grad_latent: Optional[object] = None
    grad_depth: Optional[object] = None

    def breakdown(self):
        return {"total": self.total, "l_fm": self.l_fm, "l_phys": self.l_phys,
                "l_3d": self.l_3d, **{f"l_{k}": v for k, v in self.depth_components.items()}}


def total_loss(l_fm, phys_inputs=None, depth_inputs=None, weights=ObjectiveWeights(), emit_log=True):
    """``l_fm + lambda_phys * L_phys + lambda_3d * L_3d`` with its breakdown.

    ``phys_inputs`` is ``(student, teacher)`` grids; ``depth_inputs`` is
    ``(pred_latent, target_latent, pred_depth, target_depth)``. A missing input
    contributes zero. Gradients are scaled by their lambda.
    """
    l_fm = float(l_fm)
    if not math.isfinite(l_fm):
        raise ValueError("l_fm must be finite")
    l_phys, g_student = 0.0, None
    if phys_inputs is not None:
        l_phys, g = phys_loss(*phys_inputs, margin=weights.margin)
        g_student = weights.lambda_phys * g
    l_3d, comps, g_lat, g_dep = 0.0, {}, None, None
    if depth_inputs is not None:
        d = depth_objective(*depth_inputs, beta=weights.beta)
        l_3d, comps = d.total, d.components()
        g_lat = weights.lambda_3d * d.grad_latent
        g_dep = weights.lambda_3d * d.grad_depth
    total = l_fm + weights.lambda_phys * l_phys + weights.lambda_3d * l_3d
    result = ObjectiveResult(total, l_fm, l_phys, l_3d, comps, g_student, g_lat, g_dep)
    if emit_log:
        log.info(json.dumps({"event": "objective", **result.breakdown()}))
    return result
