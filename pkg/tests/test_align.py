import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinesynth.align import (
    EPS_NORM,
    GramAligner,
    GridAdapter,
    Projector,
    TokenProjector,
    alignment_loss,
    grid_adapt,
    grid_adapt_backward,
    grid_to_tokens,
    gram,
    norm_clamps,
    phys_loss,
    project_tokens,
    truncate_to_tubelet,
)
from kinesynth.exceptions import ShapeMismatchError


def cosine_oracle(grid):
    b = grid.shape[0]
    tok = grid.reshape(b, -1, grid.shape[-1])
    n = tok.shape[1]
    out = np.empty((b, n, n))
    for k in range(b):
        for i in range(n):
            for j in range(n):
                a, c = tok[k, i], tok[k, j]
                out[k, i, j] = sum(x * y for x, y in zip(a, c)) / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in c)))
    return out


def phys_oracle(s, t, m):
    gs, gt = cosine_oracle(s), cosine_oracle(t)
    b, n, _ = gs.shape
    total = 0.0
    for k in range(b):
        for i in range(n):
            for j in range(n):
                total += max(0.0, abs(gs[k, i, j] - gt[k, i, j]) - m)
    return total / (b * n * n)


def central_diff(fn, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def small_grid(rng, b=2, t=3, h=3, w=3, d=4):
    return rng.normal(size=(b, t, h, w, d))


# -- projector ------------------------------------------------------------

def test_identity_projector(rng):
    x = rng.normal(size=(2, 6, 5))
    np.testing.assert_array_equal(project_tokens(x, Projector.identity(5)), x)


def test_zero_input_gives_bias_only():
    p = Projector.random(3, 4, hidden=6, activation="tanh", seed=1)
    p.b1 = np.linspace(-1, 1, 6)
    p.b2 = np.arange(4.0)
    y = project_tokens(np.zeros((1, 2, 3)), p)
    np.testing.assert_allclose(y[0, 0], np.tanh(p.b1) @ p.w2 + p.b2, atol=1e-15)


@pytest.mark.parametrize("act", ["gelu", "relu", "tanh", "identity"])
def test_projector_matches_loop_oracle(rng, act):
    p = Projector.random(3, 2, hidden=4, activation=act, seed=2)
    p.b1 = rng.normal(size=4)
    p.b2 = rng.normal(size=2)
    x = rng.normal(size=(2, 5, 3))
    f = {"gelu": lambda v: 0.5 * v * (1 + math.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v ** 3))),
         "relu": lambda v: max(v, 0.0), "tanh": math.tanh, "identity": lambda v: v}[act]
    y = project_tokens(x, p)
    for b in range(2):
        for n in range(5):
            hid = [f(sum(x[b, n, i] * p.w1[i, k] for i in range(3)) + p.b1[k]) for k in range(4)]
            for o in range(2):
                want = sum(hid[k] * p.w2[k, o] for k in range(4)) + p.b2[o]
                assert y[b, n, o] == pytest.approx(want, abs=1e-6)


def test_projector_dim_mismatch(rng):
    with pytest.raises(ShapeMismatchError):
        project_tokens(rng.normal(size=(1, 2, 3)), Projector.random(4, 4))


def test_projector_backward_matches_fd(rng):
    p = Projector.random(3, 2, hidden=5, activation="tanh", seed=3)
    x = rng.normal(size=(1, 4, 3))
    w = rng.normal(size=(1, 4, 2))
    g_x, g_p = p.backward(x, w)
    np.testing.assert_allclose(g_x, central_diff(lambda v: float(np.sum(p.forward(v) * w)), x), atol=1e-7)

    def with_w1(v):
        q = Projector(v, p.b1, p.w2, p.b2, p.activation)
        return float(np.sum(q.forward(x) * w))

    np.testing.assert_allclose(g_p["w1"], central_diff(with_w1, p.w1), atol=1e-7)


# -- grid adaptation ------------------------------------------------------

def test_grid_adapt_identity(rng):
    g = small_grid(rng, 1, 2, 3, 4, 2)
    out = grid_adapt(grid_to_tokens(g), (2, 3, 4), (2, 3, 4))
    np.testing.assert_array_equal(out, g)


@given(st.tuples(*[st.integers(1, 5)] * 3), st.tuples(*[st.integers(1, 6)] * 3), st.floats(-5, 5))
def test_grid_adapt_constant(src, tgt, c):
    tok = np.full((1, int(np.prod(src)), 2), c)
    np.testing.assert_allclose(grid_adapt(tok, src, tgt), c, atol=1e-12)


def trilinear_field(t, h, w, coef):
    a = coef
    return (a[0] + a[1] * t + a[2] * h + a[3] * w + a[4] * t * h + a[5] * h * w + a[6] * t * w
            + a[7] * t * h * w)


@given(st.tuples(*[st.integers(2, 5)] * 3), st.tuples(*[st.integers(1, 7)] * 3),
       st.lists(st.floats(-3, 3), min_size=8, max_size=8))
def test_grid_adapt_exact_on_trilinear(src, tgt, coef):
    def axis(n):
        return np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)

    ts, hs, ws = np.meshgrid(*(axis(n) for n in src), indexing="ij")
    tok = trilinear_field(ts, hs, ws, coef).reshape(1, -1, 1)
    out = grid_adapt(tok, src, tgt)[0, ..., 0]
    tt, hh, ww = np.meshgrid(*(axis(n) for n in tgt), indexing="ij")
    np.testing.assert_allclose(out, trilinear_field(tt, hh, ww, coef), atol=1e-9)


def test_grid_adapt_backward_is_adjoint(rng):
    src, tgt = (3, 2, 4), (4, 5, 3)
    x = rng.normal(size=(2, 24, 3))
    y = rng.normal(size=(2, *tgt, 3))
    lhs = np.sum(grid_adapt(x, src, tgt) * y)
    rhs = np.sum(x * grid_adapt_backward(y, src, tgt))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_grid_adapt_errors(rng):
    with pytest.raises(ValueError):
        grid_adapt(rng.normal(size=(1, 8, 2)), (2, 2, 2), (0, 2, 2))
    with pytest.raises(ShapeMismatchError):
        grid_adapt(rng.normal(size=(1, 7, 2)), (2, 2, 2), (2, 2, 2))


def test_gram_of_adapted_field_converges():
    def field(t, h, w):
        return np.stack([np.sin(2 * t + h), np.cos(3 * w - t), 1 + h * w, np.exp(-t)], axis=-1)

    tgt = (3, 3, 3)
    axes = [np.linspace(0, 1, n) for n in tgt]
    want = gram(field(*np.meshgrid(*axes, indexing="ij"))[None])
    errs = []
    for n in (2, 3, 5, 9, 17):
        a = np.linspace(0, 1, n)
        src = field(*np.meshgrid(a, a, a, indexing="ij"))[None]
        got = gram(grid_adapt(grid_to_tokens(src), (n, n, n), tgt))
        errs.append(np.abs(got - want).max())
    assert errs[-1] < 1e-2
    # n = 3 and 5 and 9 contain the target nodes exactly; compare the doubling ladder 2, 5, 17 only
    assert errs[0] >= errs[2] >= errs[4]
    assert errs[1] < 1e-12 and errs[2] < 1e-12


def test_truncate_to_tubelet():
    x = np.zeros((1, 49, 2, 2, 3))
    assert truncate_to_tubelet(x).shape[1] == 48
    assert truncate_to_tubelet(x[:, :48]).shape[1] == 48
    with pytest.raises(ValueError):
        truncate_to_tubelet(x[:, :1])


# -- Gram ---------------------------------------------------------------

def test_gram_identical_tokens():
    g = gram(np.tile([1.0, -2.0, 0.5], (1, 2, 2, 2, 1)))
    np.testing.assert_allclose(g, 1.0, atol=1e-12)


def test_gram_orthogonal_tokens():
    g = gram(np.array([[[[[1.0, 0.0]], [[0.0, 3.0]]]]]))
    np.testing.assert_allclose(g[0], np.eye(2), atol=1e-15)


def test_gram_matches_oracle(rng):
    grid = small_grid(rng, 2, 3, 3, 4, 5)
    np.testing.assert_allclose(gram(grid), cosine_oracle(grid), atol=1e-7)


@given(st.integers(0, 2**32 - 1))
def test_gram_properties(seed):
    r = np.random.default_rng(seed)
    grid = r.normal(size=(2, 2, 2, 3, 4))
    g = gram(grid)
    np.testing.assert_array_equal(g, g.transpose(0, 2, 1))
    assert np.abs(np.diagonal(g, axis1=1, axis2=2) - 1).max() <= 1e-6
    assert np.all(np.abs(g) <= 1 + 1e-12)
    scaled = grid * r.uniform(0.01, 100, size=grid.shape[:-1] + (1,))
    assert np.abs(gram(scaled) - g).max() <= 1e-6
    q, _ = np.linalg.qr(r.normal(size=(4, 4)))
    assert np.abs(gram(grid @ q) - g).max() <= 1e-6


def test_zero_token_is_clamped_not_fatal():
    norm_clamps.reset()
    grid = np.ones((1, 1, 1, 3, 2))
    grid[0, 0, 0, 1] = 0.0
    g = gram(grid)
    assert np.all(np.isfinite(g))
    assert norm_clamps.count == 1
    assert EPS_NORM == 1e-8


# -- relational loss ------------------------------------------------------

def test_phys_loss_self_is_zero(rng):
    x = small_grid(rng)
    loss, grad = phys_loss(x, x)
    assert loss == 0.0
    assert not grad.any()


def test_phys_loss_dead_zone(rng):
    t = small_grid(rng)
    s = t + 1e-3 * rng.normal(size=t.shape)
    assert np.abs(gram(s) - gram(t)).max() <= 0.1
    assert phys_loss(s, t, 0.1)[0] == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_phys_loss_matches_oracle(seed):
    r = np.random.default_rng(seed)
    s, t = r.normal(size=(2, 3, 3, 3, 4)), r.normal(size=(2, 3, 3, 3, 4))
    assert phys_loss(s, t, 0.1)[0] == pytest.approx(phys_oracle(s, t, 0.1), abs=1e-7)


@pytest.mark.parametrize("seed", range(4))
def test_phys_loss_gradient(seed):
    r = np.random.default_rng(100 + seed)
    while True:
        s, t = r.normal(size=(1, 2, 2, 3, 3)), r.normal(size=(1, 2, 2, 3, 3))
        if np.abs(np.abs(gram(s) - gram(t)) - 0.1).min() > 1e-3:
            break
    _, grad = phys_loss(s, t, 0.1)
    num = central_diff(lambda v: phys_loss(v, t, 0.1)[0], s, h=1e-6)
    rel = np.abs(grad - num).max() / max(np.abs(num).max(), 1e-12)
    assert rel <= 1e-4


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
def test_margin_monotone(seed, m1, m2):
    r = np.random.default_rng(seed)
    s, t = r.normal(size=(1, 2, 2, 2, 3)), r.normal(size=(1, 2, 2, 2, 3))
    lo, hi = sorted((m1, m2))
    assert phys_loss(s, t, hi)[0] <= phys_loss(s, t, lo)[0]


def test_phys_loss_errors(rng):
    with pytest.raises(ShapeMismatchError):
        phys_loss(small_grid(rng), small_grid(rng, t=2))
    with pytest.raises(ValueError):
        phys_loss(small_grid(rng), small_grid(rng), margin=-0.1)


def test_alignment_chain_gradient(rng):
    p = Projector.random(3, 4, hidden=5, activation="tanh", seed=9)
    hidden = rng.normal(size=(1, 2 * 2 * 3, 3))
    teacher = rng.normal(size=(1, 3, 2, 2, 4))
    loss, g_hidden, _ = alignment_loss(hidden, (2, 2, 3), p, teacher, margin=0.05)
    num = central_diff(lambda v: alignment_loss(v, (2, 2, 3), p, teacher, 0.05)[0], hidden)
    assert loss > 0
    assert np.abs(g_hidden - num).max() <= 1e-4 * np.abs(num).max()


# -- estimators -----------------------------------------------------------

def test_estimators(rng):
    tok = rng.normal(size=(1, 12, 3))
    ad = GridAdapter(source_grid=(1, 3, 4), target_grid=(2, 2, 2)).fit()
    assert ad.transform(tok).shape == (1, 2, 2, 2, 3)
    proj = TokenProjector(identity=True).fit(tok)
    np.testing.assert_array_equal(proj.transform(tok), tok)
    teacher = rng.normal(size=(1, 2, 2, 2, 3))
    aligner = GramAligner(margin=0.1).fit(teacher)
    assert aligner.score(teacher) == 0.0
    assert aligner.get_params() == {"margin": 0.1}
