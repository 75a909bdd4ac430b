"""Seeded scene sampling and prompt text for synthetic physics clips.

A scene is a pure function of ``(seed, preset)``: every random draw goes
through one ``numpy.random.Generator`` seeded from the 64-bit scene seed, in
a fixed order, so identical inputs give bit-identical configs.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .exceptions import ConfigurationError
from .validation import check_range

SHAPE_KINDS = ("sphere", "box", "cylinder", "cone", "icosphere")

# name -> (shape, mass kg, diameter m, rgb)
BALL_CATALOG = {
    "basketball": ("sphere", 0.62, 0.24, (214, 104, 38)),
    "soccer ball": ("sphere", 0.43, 0.22, (236, 236, 236)),
    "volleyball": ("sphere", 0.27, 0.21, (240, 220, 120)),
    "tennis ball": ("sphere", 0.058, 0.067, (200, 230, 60)),
    "bowling ball": ("sphere", 6.35, 0.218, (40, 40, 120)),
    "baseball": ("sphere", 0.145, 0.074, (245, 240, 230)),
}
PRIMITIVE_CATALOG = {
    "cube": "box",
    "cylinder": "cylinder",
    "cone": "cone",
    "icosphere": "icosphere",
}


@dataclass(frozen=True)
class ObjectSpec:
    shape_kind: str
    category_label: str
    mass: float
    characteristic_size: float
    restitution: float
    friction: float
    initial_position: tuple
    force_magnitude: float
    force_angle_deg: float
    drop_height: float
    color: tuple = (180, 180, 180)

    def __post_init__(self):
        if self.shape_kind not in SHAPE_KINDS:
            raise ConfigurationError(f"unknown shape kind {self.shape_kind!r}")
        if not self.mass > 0:
            raise ConfigurationError("mass must be > 0")
        if not self.characteristic_size > 0:
            raise ConfigurationError("characteristic_size must be > 0")
        if not 0.0 <= self.restitution <= 1.0:
            raise ConfigurationError("restitution must lie in [0, 1]")
        if not self.friction >= 0:
            raise ConfigurationError("friction must be >= 0")
        if not self.drop_height >= 0:
            raise ConfigurationError("drop_height must be >= 0")
        if not self.force_magnitude >= 0:
            raise ConfigurationError("force magnitude must be >= 0")
        if not 0.0 <= self.force_angle_deg < 360.0:
            raise ConfigurationError("force direction must lie in [0, 360)")
        if len(self.initial_position) != 3:
            raise ConfigurationError("initial_position needs 3 components")

    @property
    def radius(self):
        """Bounding radius used for placement and collision proxies."""
        return bounding_radius(self.shape_kind, self.characteristic_size)

    def impulse_velocity(self, fps):
        """Horizontal velocity produced by applying the force for one frame."""
        dv = self.force_magnitude / fps / self.mass
        a = math.radians(self.force_angle_deg)
        return (dv * math.cos(a), 0.0, dv * math.sin(a))


@dataclass(frozen=True)
class CameraSpec:
    position: tuple
    look_at: tuple
    focal_length: float
    principal_point: tuple
    near: float = 0.05
    far: float = 100.0

    def __post_init__(self):
        if not self.focal_length > 0:
            raise ConfigurationError("focal_length must be > 0")
        if not 0 < self.near < self.far:
            raise ConfigurationError("need 0 < near < far")


@dataclass(frozen=True)
class SceneConfig:
    seed: int
    objects: tuple
    camera: CameraSpec
    gravity: float = 9.81
    frame_count: int = 90
    fps: float = 24.0
    resolution: tuple = (512, 512)  # (height, width)
    prompt: str = ""

    def __post_init__(self):
        if self.frame_count < 2:
            raise ConfigurationError("frame_count must be >= 2")
        if self.fps <= 0:
            raise ConfigurationError("fps must be > 0")
        if len(self.resolution) != 2 or min(self.resolution) <= 0:
            raise ConfigurationError("resolution components must be > 0")
        if not self.objects:
            raise ConfigurationError("a scene needs at least one object")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        objects = tuple(
            ObjectSpec(**{**o, "initial_position": tuple(o["initial_position"]),
                          "color": tuple(o["color"])})
            for o in d["objects"]
        )
        cam = d["camera"]
        camera = CameraSpec(
            position=tuple(cam["position"]),
            look_at=tuple(cam["look_at"]),
            focal_length=cam["focal_length"],
            principal_point=tuple(cam["principal_point"]),
            near=cam["near"],
            far=cam["far"],
        )
        return cls(
            seed=int(d["seed"]),
            objects=objects,
            camera=camera,
            gravity=d["gravity"],
            frame_count=int(d["frame_count"]),
            fps=d["fps"],
            resolution=tuple(int(r) for r in d["resolution"]),
            prompt=d["prompt"],
        )


@dataclass
class SamplingPreset:
    """Parameter ranges for :func:`sample_scene`.

    Every ``*_range`` is an inclusive ``(min, max)`` pair. ``max_launch_speed``
    caps the push so light objects stay inside the tunneling-safe speed band;
    the sampled force still lies inside ``force_range``.
    """

    object_count: tuple = (3, 7)
    mass_range: tuple = (0.05, 7.5)
    size_range: tuple = (0.04, 0.5)
    force_range: tuple = (0.0, 20.0)
    height_range: tuple = (0.5, 4.0)
    restitution_range: tuple = (0.3, 0.85)
    friction_range: tuple = (0.2, 0.8)
    density_range: tuple = (150.0, 1200.0)
    placement_radius: float = 0.9
    push_probability: float = 0.8
    max_launch_speed: float = 3.0
    ball_fraction: float = 0.5
    elevation_deg: tuple = (10.0, 40.0)
    azimuth_deg: tuple = (0.0, 360.0)
    distance: tuple = (4.0, 8.0)
    fov_deg: tuple = (40.0, 55.0)
    gravity: float = 9.81
    frame_count: int = 90
    fps: float = 24.0
    resolution: tuple = (512, 512)
    enforce_training_counts: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        lo, hi = check_range(self.object_count, "object_count", lower=1)
        if int(lo) != lo or int(hi) != hi:
            raise ConfigurationError("object_count bounds must be integers")
        if self.enforce_training_counts and (lo < 3 or hi > 7):
            raise ConfigurationError("training presets need object_count within [3, 7]")
        check_range(self.mass_range, "mass_range")
        check_range(self.size_range, "size_range")
        check_range(self.force_range, "force_range", lower=0.0)
        check_range(self.height_range, "height_range", lower=0.0)
        check_range(self.restitution_range, "restitution_range", lower=0.0, upper=1.0)
        check_range(self.friction_range, "friction_range", lower=0.0)
        check_range(self.density_range, "density_range")
        check_range(self.elevation_deg, "elevation_deg", lower=-89.0, upper=89.0)
        check_range(self.azimuth_deg, "azimuth_deg")
        check_range(self.distance, "distance")
        check_range(self.fov_deg, "fov_deg", lower=1.0, upper=170.0)
        if self.mass_range[0] <= 0:
            raise ConfigurationError("mass_range must be positive")
        if self.size_range[0] <= 0:
            raise ConfigurationError("size_range must be positive")
        if self.distance[0] <= 0:
            raise ConfigurationError("distance must be positive")
        if self.force_range[1] <= 0:
            raise ConfigurationError("force_range must allow a nonzero push")
        if not 0 <= self.push_probability <= 1:
            raise ConfigurationError("push_probability must lie in [0, 1]")
        if not 0 <= self.ball_fraction <= 1:
            raise ConfigurationError("ball_fraction must lie in [0, 1]")
        if self.max_launch_speed <= 0 or self.placement_radius < 0:
            raise ConfigurationError("max_launch_speed must be > 0, placement_radius >= 0")
        if self.frame_count < 2 or self.fps <= 0 or min(self.resolution) <= 0:
            raise ConfigurationError("bad frame_count / fps / resolution")

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigurationError(f"unknown preset keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in mapping.items()}
        return cls(**kw)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"preset file {path} must hold a mapping")
        return cls.from_mapping(data)

    def to_mapping(self):
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in dataclasses.asdict(self).items()}

    def with_overrides(self, **kw):
        return dataclasses.replace(self, **kw)


def bounding_radius(shape_kind, size):
    """Radius of the sphere enclosing a shape of characteristic ``size``.

    Spheres/icospheres: size is the diameter. Boxes: size is the edge.
    Cylinders and cones: diameter equals height equals ``size``.
    """
    if shape_kind in ("sphere", "icosphere"):
        return 0.5 * size
    if shape_kind == "box":
        return 0.5 * math.sqrt(3.0) * size
    return 0.5 * math.sqrt(2.0) * size


def shape_volume(shape_kind, size):
    r = 0.5 * size
    if shape_kind in ("sphere", "icosphere"):
        return 4.0 / 3.0 * math.pi * r ** 3
    if shape_kind == "box":
        return size ** 3
    if shape_kind == "cylinder":
        return math.pi * r * r * size
    return math.pi * r * r * size / 3.0


def _clip(x, rng_pair):
    return float(min(max(x, rng_pair[0]), rng_pair[1]))


def _uniform(rng, pair):
    return float(rng.uniform(pair[0], pair[1])) if pair[1] > pair[0] else float(pair[0])


def _sample_object(rng, preset):
    if rng.random() < preset.ball_fraction:
        label = list(BALL_CATALOG)[int(rng.integers(len(BALL_CATALOG)))]
        shape, mass0, size0, color = BALL_CATALOG[label]
        jitter = rng.uniform(0.95, 1.05, size=2)
        mass = _clip(mass0 * jitter[0], preset.mass_range)
        size = _clip(size0 * jitter[1], preset.size_range)
    else:
        label = list(PRIMITIVE_CATALOG)[int(rng.integers(len(PRIMITIVE_CATALOG)))]
        shape = PRIMITIVE_CATALOG[label]
        lo = max(preset.size_range[0], min(0.1, preset.size_range[1]))
        size = _uniform(rng, (lo, preset.size_range[1]))
        density = _uniform(rng, preset.density_range)
        mass = _clip(density * shape_volume(shape, size), preset.mass_range)
        color = tuple(int(c) for c in rng.integers(40, 256, size=3))
    restitution = _uniform(rng, preset.restitution_range)
    friction = _uniform(rng, preset.friction_range)
    h_lo = max(preset.height_range[0], bounding_radius(shape, size))
    height = _uniform(rng, (min(h_lo, preset.height_range[1]), preset.height_range[1]))
    pushed = rng.random() < preset.push_probability
    angle = float(rng.uniform(0.0, 360.0))
    # cap |dv| = F / (fps m) at max_launch_speed, keeping F inside force_range
    f_cap = min(preset.force_range[1], preset.max_launch_speed * mass * preset.fps)
    f_lo = min(preset.force_range[0], f_cap)
    force = _uniform(rng, (f_lo, f_cap))
    if not pushed:
        force = 0.0 if preset.force_range[0] == 0 else force
    return ObjectSpec(
        shape_kind=shape,
        category_label=label,
        mass=mass,
        characteristic_size=size,
        restitution=restitution,
        friction=friction,
        initial_position=(0.0, height, 0.0),
        force_magnitude=float(force),
        force_angle_deg=angle % 360.0,
        drop_height=height,
        color=tuple(int(c) for c in color),
    ), f_cap


def _place(rng, radii, radius):
    """Rejection-sample non-overlapping horizontal positions in a disc."""
    placed = []
    for r in radii:
        for attempt in range(200):
            rho = radius * math.sqrt(rng.random())
            phi = 2 * math.pi * rng.random()
            p = (rho * math.cos(phi), rho * math.sin(phi))
            if all(math.hypot(p[0] - q[0], p[1] - q[1]) > r + rq + 0.02
                   for q, rq in zip(placed, radii)):
                break
            radius *= 1.02
        placed.append(p)
    return placed


def sample_camera(rng, preset, look_at):
    elev = math.radians(_uniform(rng, preset.elevation_deg))
    azim = math.radians(_uniform(rng, preset.azimuth_deg) % 360.0)
    dist = _uniform(rng, preset.distance)
    fov = math.radians(_uniform(rng, preset.fov_deg))
    h, w = preset.resolution
    focal = 0.5 * w / math.tan(0.5 * fov)
    offset = (
        dist * math.cos(elev) * math.cos(azim),
        dist * math.sin(elev),
        dist * math.cos(elev) * math.sin(azim),
    )
    position = tuple(float(a + b) for a, b in zip(look_at, offset))
    return CameraSpec(
        position=position,
        look_at=tuple(float(v) for v in look_at),
        focal_length=float(focal),
        principal_point=(0.5 * w, 0.5 * h),
        near=0.05,
        far=100.0,
    )


def sample_scene(seed, preset: Optional[SamplingPreset] = None) -> SceneConfig:
    """Draw one scene configuration.

    The same ``(seed, preset)`` always yields an identical :class:`SceneConfig`.
    At least one object receives a nonzero push.
    """
    preset = preset or SamplingPreset()
    preset.validate()
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    rng = np.random.default_rng(seed)

    n = int(rng.integers(int(preset.object_count[0]), int(preset.object_count[1]) + 1))
    draws, caps = [], []
    for _ in range(n):
        obj, cap = _sample_object(rng, preset)
        draws.append(obj)
        caps.append(cap)
    positions = _place(rng, [o.radius for o in draws], preset.placement_radius)
    objects = [
        dataclasses.replace(o, initial_position=(float(p[0]), o.drop_height, float(p[1])))
        for o, p in zip(draws, positions)
    ]

    if all(o.force_magnitude <= 0 for o in objects):
        k = int(rng.integers(n))
        lo = max(preset.force_range[0], 0.25 * caps[k])
        force = _uniform(rng, (min(lo, caps[k]), caps[k]))
        objects[k] = dataclasses.replace(objects[k], force_magnitude=force)

    xs = [o.initial_position[0] for o in objects]
    zs = [o.initial_position[2] for o in objects]
    ys = [o.drop_height for o in objects]
    look_at = (float(np.mean(xs)), 0.5 * float(np.mean(ys)), float(np.mean(zs)))
    camera = sample_camera(rng, preset, look_at)

    config = SceneConfig(
        seed=seed,
        objects=tuple(objects),
        camera=camera,
        gravity=preset.gravity,
        frame_count=preset.frame_count,
        fps=preset.fps,
        resolution=tuple(preset.resolution),
    )
    return dataclasses.replace(config, prompt=render_prompt(config))


def _num(x):
    return f"{x:.3g}"


def _direction_phrase(angle):
    return f"{_num(angle)} degrees"


def render_prompt(config: SceneConfig) -> str:
    """Fixed-schema English description carrying every object's physics."""
    n = len(config.objects)
    noun = "object" if n == 1 else "objects"
    parts = [f"A physics scene with {n} {noun} on a flat floor, filmed at {_num(config.fps)} fps."]
    for i, o in enumerate(config.objects, start=1):
        size_word = "diameter" if o.shape_kind in ("sphere", "icosphere") else "size"
        head = (f"Object {i} is a {_num(o.mass)} kg {o.category_label} "
                f"({size_word} {_num(o.characteristic_size)} m) released from a height of "
                f"{_num(o.drop_height)} m")
        if o.force_magnitude > 0:
            parts.append(f"{head} and pushed with a {_num(o.force_magnitude)} N force "
                         f"toward {_direction_phrase(o.force_angle_deg)}.")
        else:
            parts.append(f"{head}; it is dropped straight down without a push.")
    return " ".join(parts)


def closest_horizontal_approach(a: ObjectSpec, b: ObjectSpec, fps, duration):
    """Minimum horizontal center distance of two objects moving ballistically.

    Each object keeps its initial push velocity for ``duration`` seconds;
    collisions and friction are ignored.
    """
    pa = np.array([a.initial_position[0], a.initial_position[2]])
    pb = np.array([b.initial_position[0], b.initial_position[2]])
    va = np.array(a.impulse_velocity(fps))[[0, 2]]
    vb = np.array(b.impulse_velocity(fps))[[0, 2]]
    dp, dv = pb - pa, vb - va
    speed2 = float(dv @ dv)
    t = 0.0 if speed2 == 0 else min(max(-float(dp @ dv) / speed2, 0.0), duration)
    return float(np.linalg.norm(dp + t * dv))


def collision_potential(config: SceneConfig):
    """True if some pair's ballistic horizontal paths come within the sum of their radii."""
    duration = config.frame_count / config.fps
    objs = config.objects
    return any(
        closest_horizontal_approach(objs[i], objs[j], config.fps, duration) <= objs[i].radius + objs[j].radius
        for i in range(len(objs)) for j in range(i + 1, len(objs))
    )


def load_preset(path=None) -> SamplingPreset:
    if path is None:
        return SamplingPreset()
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"preset file {path} not found")
    return SamplingPreset.from_file(path)
