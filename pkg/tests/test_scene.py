import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from kinesynth.exceptions import ConfigurationError
from kinesynth.scene import (
    CameraSpec,
    ObjectSpec,
    SamplingPreset,
    SceneConfig,
    closest_horizontal_approach,
    collision_potential,
    load_preset,
    render_prompt,
    sample_scene,
)

seeds = st.integers(min_value=0, max_value=2**64 - 1)


def _obj(**kw):
    base = dict(shape_kind="sphere", category_label="ball", mass=0.6, characteristic_size=0.2,
                restitution=0.5, friction=0.5, initial_position=(0.0, 2.0, 0.0),
                force_magnitude=5.0, force_angle_deg=90.0, drop_height=2.0)
    base.update(kw)
    return ObjectSpec(**base)


def _cam():
    return CameraSpec(position=(0.0, 2.0, 6.0), look_at=(0.0, 0.5, 0.0),
                      focal_length=500.0, principal_point=(256.0, 256.0))


@given(seeds)
def test_same_seed_same_config(seed):
    assert sample_scene(seed) == sample_scene(seed)


@given(seeds)
def test_sampled_values_stay_in_range(seed):
    p = SamplingPreset()
    cfg = sample_scene(seed, p)
    assert p.object_count[0] <= len(cfg.objects) <= p.object_count[1]
    assert any(o.force_magnitude > 0 for o in cfg.objects)
    for o in cfg.objects:
        assert p.mass_range[0] <= o.mass <= p.mass_range[1]
        assert p.size_range[0] <= o.characteristic_size <= p.size_range[1]
        assert p.force_range[0] <= o.force_magnitude <= p.force_range[1]
        assert p.height_range[0] <= o.drop_height <= p.height_range[1]
        assert p.restitution_range[0] <= o.restitution <= p.restitution_range[1]
        assert 0.0 <= o.force_angle_deg < 360.0
        # push stays in the tunneling-safe band
        assert o.force_magnitude / cfg.fps / o.mass <= p.max_launch_speed + 1e-9
    dist = np.linalg.norm(np.subtract(cfg.camera.position, cfg.camera.look_at))
    assert p.distance[0] - 1e-9 <= dist <= p.distance[1] + 1e-9


def test_different_seeds_differ():
    assert sample_scene(1) != sample_scene(2)


@pytest.mark.slow
def test_force_angles_uniform():
    angles = [o.force_angle_deg for s in range(10_000) for o in sample_scene(s).objects[:1]]
    counts, _ = np.histogram(angles, bins=36, range=(0, 360))
    assert chisquare(counts).pvalue > 0.01


def test_collision_potential_majority():
    hits = [collision_potential(sample_scene(s)) for s in range(400)]
    assert np.mean(hits) >= 0.5


def test_closest_approach_head_on():
    a = _obj(initial_position=(-1.0, 1.0, 0.0), force_magnitude=0.6 * 24, force_angle_deg=0.0)
    b = _obj(initial_position=(1.0, 1.0, 0.0), force_magnitude=0.0)
    # a moves at 1 m/s towards b; they meet within 2 s
    assert closest_horizontal_approach(a, b, 24.0, 3.0) == pytest.approx(0.0, abs=1e-12)
    assert closest_horizontal_approach(a, b, 24.0, 1.0) == pytest.approx(1.0)


def test_prompt_mentions_physics():
    cfg = SceneConfig(seed=0, objects=(_obj(),), camera=_cam())
    text = render_prompt(cfg)
    for token in ("0.6", "5", "90", "2"):
        assert token in text
    assert "pushed" in text


def test_prompt_for_unpushed_drop():
    cfg = SceneConfig(seed=0, objects=(_obj(force_magnitude=0.0),), camera=_cam())
    assert "without a push" in render_prompt(cfg)


def test_prompt_deterministic():
    cfg = sample_scene(99)
    assert render_prompt(cfg) == render_prompt(cfg) == cfg.prompt


def test_config_dict_roundtrip():
    cfg = sample_scene(5)
    assert SceneConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("kw", [
    {"mass": 0.0}, {"characteristic_size": -1.0}, {"restitution": 1.5},
    {"friction": -0.1}, {"drop_height": -1.0}, {"force_angle_deg": 360.0},
    {"shape_kind": "torus"},
])
def test_object_invariants(kw):
    with pytest.raises(ConfigurationError):
        _obj(**kw)


@pytest.mark.parametrize("kw", [
    {"mass_range": (2.0, 1.0)}, {"object_count": (2, 7)}, {"size_range": (0.0, 1.0)},
    {"force_range": (0.0, 0.0)}, {"restitution_range": (0.2, 1.2)},
])
def test_invalid_preset(kw):
    with pytest.raises(ConfigurationError):
        SamplingPreset(**kw)


def test_free_object_count_outside_training():
    p = SamplingPreset(object_count=(1, 1), enforce_training_counts=False)
    assert len(sample_scene(3, p).objects) == 1


def test_preset_file_roundtrip(tmp_path):
    import yaml

    p = SamplingPreset(resolution=(128, 128), mass_range=(0.1, 2.0))
    path = tmp_path / "preset.yaml"
    path.write_text(yaml.safe_dump(p.to_mapping()))
    assert load_preset(path) == p


def test_preset_file_unknown_key(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("gravity: 9.81\nwobble: 3\n")
    with pytest.raises(ConfigurationError, match="wobble"):
        load_preset(path)


def test_missing_preset_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_preset(tmp_path / "nope.yaml")


def test_camera_looks_at_scene():
    cfg = sample_scene(11)
    cam = cfg.camera
    assert cam.principal_point == (256.0, 256.0)
    assert cam.near < cam.far
    p = dataclasses.replace(SamplingPreset(), resolution=(64, 128))
    cam2 = sample_scene(11, p).camera
    assert cam2.principal_point == (64.0, 32.0)
