import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinesynth.exceptions import EmptyTrackError, InsufficientFramesError, ValidationError
from kinesynth.formats import encode_mask_png
from kinesynth.pis import (
    DETERMINANTS,
    EPS,
    CentroidTrack,
    PISScorer,
    evaluate_masks,
    evaluate_tracks,
    evaluate_video,
    extract_tracks,
    kinematics,
    pis_score,
    pis_value,
    score_track,
)
from kinesynth.projection import flight_time, projectile_pixels
from kinesynth.render import project_point, render_frame
from kinesynth.scene import CameraSpec, ObjectSpec, SceneConfig
from kinesynth.sim import simulate

G = 9.81
FPS = 24.0


def track_from(uv, size=20.0, fps=FPS, obj_id=1):
    n = len(uv)
    return CentroidTrack(obj_id, uv[:, 0].astype(float), uv[:, 1].astype(float),
                         np.full(n, size) if np.isscalar(size) else np.asarray(size, float),
                         np.ones(n, bool), fps)


def projectile_track(v0=6.0, deg=50.0, z=6.0, f=500.0):
    th = math.radians(deg)
    frames = int(flight_time(v0, th, G) * FPS)
    return track_from(projectile_pixels(v0, th, G, FPS, frames, f, (256, 256), origin=(-1.5, 0.0, z)))


def noisy(track, amp, rng):
    n = len(track)
    return CentroidTrack(track.obj_id, track.u + amp * rng.normal(size=n), track.v + amp * rng.normal(size=n),
                         track.size.copy(), track.valid.copy(), track.fps)


# -- score formula --------------------------------------------------------

def test_constant_sequence_scores_one():
    res = pis_score(np.full(10, 3.5), [(0, 10)])
    assert res.score == 1.0
    assert res.windows[0].sigma == 0.0


def test_zero_mean_limit():
    seq = np.array([1.0, -1.0] * 5)
    ratios = []
    for eps in (1e-2, 1e-4, 1e-6):
        score = pis_score(seq, [(0, 10)], eps=eps).score
        assert score == pytest.approx(eps / (1.0 + eps), rel=1e-12)
        ratios.append(score / eps)  # sigma = 1
    assert ratios[-1] == pytest.approx(1.0, abs=1e-5)


@given(st.floats(-1e3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_formula_monotone(mu, s1, s2):
    lo, hi = sorted((s1, s2))
    if lo < hi:
        assert pis_value(mu, hi) < pis_value(mu, lo)
    assert 0 < pis_value(mu, hi) <= 1
    assert pis_value(mu, 0.0) == 1.0
    m1, m2 = sorted((abs(mu), abs(mu) + 1.0))
    assert pis_value(m2, hi) > pis_value(m1, hi)


def test_stored_stats_reproduce_score(rng):
    seq = rng.normal(2.0, 0.3, size=40)
    res = pis_score(seq, [(0, 20), (25, 40)])
    for w in res.windows:
        assert w.score == 1.0 / (1.0 + w.sigma / (abs(w.mu) + EPS))
        assert w.sigma == pytest.approx(np.std(seq[w.start:w.stop], ddof=0))
    assert res.score == pytest.approx((20 * res.windows[0].score + 15 * res.windows[1].score) / 35)


def test_empty_window_rejected():
    with pytest.raises(ValueError):
        pis_score(np.ones(5), [(0, 2)])


# -- tracks and kinematics ------------------------------------------------

def test_square_centroid_and_size():
    masks = np.zeros((3, 40, 50), np.uint8)
    masks[:, 12:22, 20:30] = 4
    (t,) = extract_tracks(masks, FPS)
    assert t.obj_id == 4
    np.testing.assert_allclose(t.u, 24.5)
    np.testing.assert_allclose(t.v, 16.5)
    np.testing.assert_allclose(t.size, 10.0)
    assert t.valid.all()


def test_leaving_frame_invalidates_trailing_frames():
    masks = np.zeros((8, 30, 30), np.uint8)
    for i in range(8):
        x = 5 + 4 * i
        masks[i, 10:16, x:min(x + 6, 30)] = 1
    (t,) = extract_tracks(masks, FPS)
    assert t.valid.tolist() == [True] * 5 + [False] * 3


def test_small_area_invalid_and_absent_id():
    masks = np.zeros((4, 20, 20), np.uint8)
    masks[:, 5:8, 5:8] = 1
    masks[2, 5:7, 5:9] = 0
    (t,) = extract_tracks(masks, FPS)
    assert t.valid.tolist() == [True, True, False, True]
    with pytest.raises(EmptyTrackError):
        extract_tracks(masks, FPS, ids=[2])


def test_linear_motion():
    n = 12
    uv = np.stack([10 + 3.0 * np.arange(n), np.full(n, 50.0)], axis=1)
    kin = kinematics(track_from(uv))
    np.testing.assert_allclose(kin.vel[:, 0], 3.0 * FPS)
    np.testing.assert_allclose(kin.acc[:, 0], 0.0, atol=1e-9)


def test_quadratic_motion():
    n, gp = 15, 0.4
    t = np.arange(n)
    uv = np.stack([np.zeros(n), 0.5 * gp * t * t], axis=1)
    kin = kinematics(track_from(uv))
    assert np.abs(kin.acc[1:-1, 1] - gp * FPS ** 2).max() <= 1e-6


def test_insufficient_frames():
    t = track_from(np.zeros((5, 2)))
    t.valid[:] = [True, True, False, True, True]
    with pytest.raises(InsufficientFramesError):
        kinematics(t)


# -- invariances ----------------------------------------------------------

@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_time_reversal(seed, amp):
    t = noisy(projectile_track(), amp, np.random.default_rng(seed))
    fwd, back = score_track(t, []), score_track(t.reversed(), [])
    for d in ("a_x", "a_y"):
        assert back.scores[d].score == pytest.approx(fwd.scores[d].score, abs=1e-9)


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1), st.floats(-300, 300), st.floats(-300, 300))
def test_translation_invariance(seed, du, dv):
    t = noisy(projectile_track(), 0.3, np.random.default_rng(seed))
    a, b = score_track(t, []), score_track(t.shifted(du, dv), [])
    for d in DETERMINANTS:
        assert b.scores[d].score == pytest.approx(a.scores[d].score, abs=1e-9)


def test_noise_monotone_in_ensemble_mean():
    base = projectile_track()
    means = []
    for amp in (0.0, 0.1, 0.3, 1.0, 3.0):
        vals = []
        for seed in range(20):
            rep = score_track(noisy(base, amp, np.random.default_rng(seed)), [])
            vals.append(0.5 * (rep.scores["a_x"].score + rep.scores["a_y"].score))
        means.append(np.mean(vals))
    assert all(b <= a for a, b in zip(means, means[1:]))
    assert means[0] > means[-1] + 0.3


# -- projection chain and simulated scenes ---------------------------------

def test_analytic_projectile_ay():
    rep = score_track(projectile_track(), [])
    assert rep.scores["a_y"].score >= 0.999
    assert not rep.static


def _toss_scene(frames=40, res=(512, 512)):
    obj = ObjectSpec(shape_kind="sphere", category_label="ball", mass=0.5, characteristic_size=0.3,
                     restitution=0.6, friction=0.3, initial_position=(-1.0, 2.6, 0.0),
                     force_magnitude=0.5 * 24 * 2.0, force_angle_deg=0.0, drop_height=2.6)
    cam = CameraSpec(position=(0.0, 1.3, 7.0), look_at=(0.0, 1.3, 0.0), focal_length=500.0,
                     principal_point=(res[1] / 2, res[0] / 2))
    return SceneConfig(seed=0, objects=(obj,), camera=cam, frame_count=frames, resolution=res)


@pytest.fixture(scope="module")
def toss():
    cfg = _toss_scene()
    traj = simulate(cfg)
    return cfg, traj


def test_simulated_projectile_matches_oracle(toss):
    cfg, traj = toss
    uv = np.array([project_point(p, cfg.camera) for p in traj.positions[:, 0]])
    t = track_from(uv)
    rep = score_track(t, traj.contact_frames(0))
    win = rep.scores["a_y"].windows[0]
    z = cfg.camera.position[2] - traj.positions[0, 0, 2]
    assert win.mu == pytest.approx(cfg.camera.focal_length * G / z, rel=0.10)
    assert rep.scores["a_y"].score >= 0.95


def test_rendered_projectile_ay(toss):
    cfg, traj = toss
    masks = np.stack([render_frame(traj, i, cfg.camera, cfg.resolution, cfg.objects).instance_mask
                      for i in range(cfg.frame_count)])
    rep = evaluate_masks(masks, FPS, contact_frames={1: traj.contact_frames(0)})
    assert rep.objects[0].scores["a_y"].score >= 0.9
    assert rep.mean["a_y"] == rep.objects[0].scores["a_y"].score


def test_velocity_jump_lowers_motion_scores(toss):
    cfg, traj = toss
    cf = traj.contact_frames(0)
    first = cf[0] if cf else cfg.frame_count
    mid = first // 2
    kicked = traj.with_velocity_jump(0, mid, (0.4, 0.4, 0.0))

    def report(tr):
        uv = np.array([project_point(p, cfg.camera) for p in tr.positions[:, 0]])
        return score_track(track_from(uv[:first]), [])

    a, b = report(traj), report(kicked)
    for d in ("a_x", "a_y", "v_x"):
        assert b.scores[d].score < a.scores[d].score
    # a fronto-parallel kick leaves apparent size untouched
    assert b.scores["dl"].score == a.scores["dl"].score


def test_static_object_flagged(rng):
    n = 30
    still = track_from(np.full((n, 2), 100.0) + 0.05 * rng.normal(size=(n, 2)), obj_id=1)
    moving = projectile_track()
    moving.obj_id = 2
    rep = evaluate_tracks([still, moving], {})
    assert rep.objects[0].static and not rep.objects[1].static
    assert rep.objects[0].scores["v_x"].score < 0.5
    # static objects stay out of the aggregate
    assert rep.mean["a_y"] == rep.objects[1].scores["a_y"].score


def test_no_trackable_objects():
    with pytest.raises(EmptyTrackError):
        evaluate_tracks([track_from(np.zeros((2, 2)))])


# -- video entry points ---------------------------------------------------

def test_sample_dir_report(smoke_corpus, tmp_path):
    root, _ = smoke_corpus
    sample = sorted(p for p in root.iterdir() if p.is_dir())[0]
    rep = evaluate_video(sample, series_dir=tmp_path / "series")
    d = json.loads(rep.to_json())
    assert d["seed"] == 7
    assert set(d["mean"]) == set(DETERMINANTS)
    csvs = sorted((tmp_path / "series").glob("*.csv"))
    assert csvs
    assert csvs[0].read_text().splitlines()[0] == "frame,valid,u,v,l,a_x,a_y,v_x,v_y,dl"


def test_mask_dir_mode(tmp_path):
    th = math.radians(50)
    frames = int(flight_time(6.0, th, G) * FPS)
    px = projectile_pixels(6.0, th, G, FPS, frames, 500.0, (256, 256), origin=(-1.5, 0.0, 6.0))
    yy, xx = np.mgrid[:512, :512]
    for i, (u, v) in enumerate(px):
        m = (((xx - u) ** 2 + (yy - v) ** 2) <= 15 ** 2).astype(np.uint8)
        (tmp_path / f"{i:04d}.png").write_bytes(encode_mask_png(m))
    rep = evaluate_video(tmp_path, fps=FPS)
    assert rep.seed is None
    assert rep.mean["a_y"] > 0.8
    with pytest.raises(ValueError):
        evaluate_video(tmp_path)


def test_empty_mask_dir(tmp_path):
    with pytest.raises(ValidationError):
        evaluate_video(tmp_path, fps=FPS)


def test_scorer_estimator():
    t = projectile_track()
    s = PISScorer().fit([t], {1: []})
    assert s.score() == pytest.approx(np.mean([v for v in s.report_.mean.values() if v is not None]))
    assert s.get_params()["eps"] == EPS
