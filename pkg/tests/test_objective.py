import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinesynth.align import phys_loss
from kinesynth.depth import depth_objective
from kinesynth.objective import ObjectiveWeights, total_loss


def inputs(rng):
    phys = (rng.normal(size=(1, 2, 2, 2, 4)), rng.normal(size=(1, 2, 2, 2, 4)))
    depth = (rng.normal(size=(1, 2, 2, 3, 3)), rng.normal(size=(1, 2, 2, 3, 3)),
             rng.uniform(1, 4, size=(1, 1, 3, 4, 4)), rng.uniform(1, 4, size=(1, 1, 3, 4, 4)))
    return phys, depth


def test_zero_lambdas_give_l_fm(rng):
    phys, depth = inputs(rng)
    w = ObjectiveWeights(lambda_phys=0.0, lambda_3d=0.0)
    assert total_loss(1.2345, phys, depth, w).total == 1.2345


def test_perfect_alignment_gives_l_fm(rng):
    phys, depth = inputs(rng)
    r = total_loss(0.75, (phys[1], phys[1]), (depth[1], depth[1], depth[3], depth[3]))
    assert r.total == 0.75
    assert r.l_phys == 0.0 and r.l_3d == 0.0


def test_matches_hand_sum(rng):
    phys, depth = inputs(rng)
    w = ObjectiveWeights(lambda_phys=0.25, lambda_3d=1.0)
    r = total_loss(0.5, phys, depth, w)
    want = 0.5 + 0.25 * phys_loss(*phys, margin=0.1)[0] + 1.0 * depth_objective(*depth).total
    assert r.total == pytest.approx(want, abs=1e-7)
    assert r.total == pytest.approx(r.l_fm + 0.25 * r.l_phys + 1.0 * r.l_3d, abs=1e-9)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.floats(0, 5), st.floats(0, 5), st.floats(-10, 10))
def test_linear_in_lambda(seed, lp, l3, l_fm):
    phys, depth = inputs(np.random.default_rng(seed))

    def tot(k):
        return total_loss(l_fm, phys, depth, ObjectiveWeights(k * lp, k * l3), emit_log=False).total

    assert tot(2) - tot(0) == pytest.approx(2 * (tot(1) - tot(0)), rel=1e-9, abs=1e-9)


def test_gradients_scaled_by_lambda(rng):
    phys, depth = inputs(rng)
    r = total_loss(0.0, phys, depth, ObjectiveWeights(0.5, 2.0))
    np.testing.assert_allclose(r.grad_student, 0.5 * phys_loss(*phys)[1])
    np.testing.assert_allclose(r.grad_depth, 2.0 * depth_objective(*depth).grad_depth)


def test_missing_inputs_contribute_zero():
    r = total_loss(3.0)
    assert r.total == 3.0 and r.grad_student is None


@pytest.mark.parametrize("kw", [{"lambda_phys": -0.1}, {"lambda_3d": float("nan")},
                                {"margin": -1.0}, {"beta": (1, 1, 1)}])
def test_weights_validated(kw):
    with pytest.raises(ValueError):
        ObjectiveWeights(**kw)


def test_non_finite_l_fm():
    with pytest.raises(ValueError):
        total_loss(float("inf"))


def test_breakdown_logged_as_json(rng, caplog):
    phys, depth = inputs(rng)
    with caplog.at_level(logging.INFO, logger="kinesynth.objective"):
        r = total_loss(1.0, phys, depth)
    rec = json.loads(caplog.records[-1].getMessage())
    assert rec["event"] == "objective"
    assert rec["total"] == r.total
    assert set(rec) >= {"l_fm", "l_phys", "l_3d", "l_pixel", "l_structure", "l_temporal", "l_latent"}


def test_defaults():
    w = ObjectiveWeights()
    assert (w.lambda_phys, w.lambda_3d, w.margin) == (0.25, 1.0, 0.1)
