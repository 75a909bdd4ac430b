"""On-disk dataset samples and resumable corpus generation.

Layout under a dataset root::

    manifest.jsonl                      one JSON line per finished sample
    summary.json                        stats of the last generation run
    {scene_id}/metadata.json            config, prompt, physics metadata
    {scene_id}/trajectory.bin           flat float64 record (see Trajectory.to_bytes)
    {scene_id}/trajectory.events.json   contact events
    {scene_id}/rgb/{frame:04}.png
    {scene_id}/depth/{frame:04}.f32
    {scene_id}/depth_preview/{frame:04}.png
    {scene_id}/mask/{frame:04}.png

A sample directory is built under a temporary name and renamed into place, so
a crash never leaves a half-written sample under its final name. Only the
parent process appends to the manifest.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import formats
from .exceptions import BehindCameraError, SimulationDiverged, ValidationError
from .render import FrameSet, project_point, render_frame
from .scene import SamplingPreset, SceneConfig, sample_scene
from .sim import Trajectory, simulate

log = logging.getLogger("kinesynth.dataset")

FORMAT_VERSION = "1.0"
MANIFEST = "manifest.jsonl"
MODALITIES = {
    "rgb": "png",
    "depth": "f32",
    "depth_preview": "png",
    "mask": "png",
}


def scene_id_for(seed):
    return f"scene_{int(seed):08d}"


def _round9(x):
    """Recursively round floats to 9 significant digits; tuples become lists."""
    if isinstance(x, bool) or x is None or isinstance(x, (int, str)):
        return x
    if isinstance(x, (float, np.floating)):
        return float(f"{float(x):.9g}")
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, dict):
        return {k: _round9(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_round9(v) for v in x]
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dump_json(obj):
    """Canonical metadata bytes: insertion key order, 9 significant digits."""
    return (json.dumps(_round9(obj), indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def checksum(data):
    return hashlib.sha256(data).hexdigest()


def frame_path(modality, frame):
    return f"{modality}/{frame:04d}.{MODALITIES[modality]}"


@dataclass
class SampleRecord:
    scene_id: str
    config: SceneConfig
    prompt: str
    physics_metadata: list
    frame_count: int
    resolution: tuple
    format_version: str = FORMAT_VERSION
    files: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "scene_id": self.scene_id,
            "seed": self.config.seed,
            "prompt": self.prompt,
            "frame_count": self.frame_count,
            "resolution": list(self.resolution),
            "physics_metadata": self.physics_metadata,
            "config": self.config.to_dict(),
            "files": self.files,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            scene_id=d["scene_id"],
            config=SceneConfig.from_dict(d["config"]),
            prompt=d["prompt"],
            physics_metadata=d["physics_metadata"],
            frame_count=int(d["frame_count"]),
            resolution=tuple(int(v) for v in d["resolution"]),
            format_version=d["format_version"],
            files=d["files"],
        )


def physics_metadata(config):
    """Per-object physical parameters plus the pixel where the push is applied."""
    out = []
    for k, o in enumerate(config.objects):
        try:
            uv = list(project_point(o.initial_position, config.camera))
        except BehindCameraError:
            uv = None
        out.append({
            "object_id": k + 1,
            "category": o.category_label,
            "shape": o.shape_kind,
            "mass_kg": o.mass,
            "size_m": o.characteristic_size,
            "force_n": o.force_magnitude,
            "force_angle_deg": o.force_angle_deg,
            "start_height_m": o.drop_height,
            "restitution": o.restitution,
            "friction": o.friction,
            "force_pixel_uv": uv,
        })
    return out


def make_record(config: SceneConfig, scene_id: Optional[str] = None) -> SampleRecord:
    scene_id = scene_id or scene_id_for(config.seed)
    files = {m: f"{m}/{{frame:04d}}.{ext}" for m, ext in MODALITIES.items()}
    files["trajectory"] = "trajectory.bin"
    files["events"] = "trajectory.events.json"
    return SampleRecord(
        scene_id=scene_id,
        config=config,
        prompt=config.prompt,
        physics_metadata=physics_metadata(config),
        frame_count=config.frame_count,
        resolution=tuple(config.resolution),
        files=files,
    )


def write_sample(record: SampleRecord, root_dir, frames, trajectory: Trajectory):
    """Write one sample atomically and return its manifest entry (not appended).

    ``frames`` is an iterable of :class:`FrameSet`, one per frame. The sample
    is assembled in a temporary sibling directory and renamed into place.
    """
    root = Path(root_dir)
    root.mkdir(parents=True, exist_ok=True)
    final = root / record.scene_id
    tmp = root / f".tmp-{record.scene_id}-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        for m in MODALITIES:
            (tmp / m).mkdir(parents=True)
        n = 0
        for i, fs in enumerate(frames):
            (tmp / frame_path("rgb", i)).write_bytes(formats.encode_rgb_png(fs.rgb))
            (tmp / frame_path("depth", i)).write_bytes(formats.encode_depth(fs.depth))
            (tmp / frame_path("depth_preview", i)).write_bytes(formats.encode_depth_png(fs.depth))
            (tmp / frame_path("mask", i)).write_bytes(formats.encode_mask_png(fs.instance_mask))
            n += 1
        if n != record.frame_count:
            raise ValueError(f"got {n} frames, record declares {record.frame_count}")
        trajectory.save(tmp / "trajectory.bin", tmp / "trajectory.events.json")
        meta = dump_json(record.to_dict())
        (tmp / "metadata.json").write_bytes(meta)
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return _entry(record, trajectory, meta)


def read_manifest(root_dir):
    path = Path(root_dir) / MANIFEST
    if not path.exists():
        return []
    entries = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            entries.append(json.loads(line))
        except ValueError:
            raise ValidationError(path, "manifest", f"line {n} is not valid JSON") from None
    return entries


def append_manifest(root_dir, entry):
    path = Path(root_dir) / MANIFEST
    with open(path, "a") as fh:
        fh.write(json.dumps(entry, separators=(",", ":")) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def load_record(sample_dir, expected_sha=None):
    sample_dir = Path(sample_dir)
    path = sample_dir / "metadata.json"
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ValidationError(path, "metadata", str(exc)) from None
    if expected_sha is not None and checksum(data) != expected_sha:
        raise ValidationError(path, "metadata", "checksum does not match manifest")
    try:
        return SampleRecord.from_dict(json.loads(data))
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationError(path, "metadata", f"malformed metadata: {exc}") from None


def validate_sample(sample_dir, expected_sha=None, deep=True):
    """Check every file of a sample; raises :class:`ValidationError` naming the culprit.

    ``deep=False`` only checks existence of the files, not their contents.
    """
    sample_dir = Path(sample_dir)
    record = load_record(sample_dir, expected_sha)
    shape = tuple(record.resolution)
    readers = {
        "rgb": formats.read_rgb_png,
        "depth_preview": formats.read_depth_png,
        "mask": formats.read_mask_png,
    }
    n_obj = len(record.config.objects)
    for m in MODALITIES:
        for i in range(record.frame_count):
            p = sample_dir / frame_path(m, i)
            if not p.exists():
                raise ValidationError(p, m, "missing file")
            if not deep:
                continue
            if m == "depth":
                d = formats.read_depth(p)
                if d.shape != shape:
                    raise ValidationError(p, m, f"size {d.shape} != expected {shape}")
                if np.any(d <= 0):
                    raise ValidationError(p, m, "non-positive depth")
            else:
                arr = readers[m](p, shape)
                if m == "mask" and arr.max(initial=0) > n_obj:
                    raise ValidationError(p, m, f"object id {arr.max()} exceeds object count {n_obj}")
    traj = Trajectory.load(sample_dir / "trajectory.bin", sample_dir / "trajectory.events.json")
    if traj.frame_count != record.frame_count or traj.object_count != n_obj:
        raise ValidationError(sample_dir / "trajectory.bin", "trajectory",
                              "frame or object count disagrees with metadata")
    return record


@dataclass
class LoadedSample:
    root: Path
    record: SampleRecord

    @property
    def trajectory(self):
        return Trajectory.load(self.root / "trajectory.bin", self.root / "trajectory.events.json")

    def depth(self, frame):
        return formats.read_depth(self.root / frame_path("depth", frame))

    def mask(self, frame):
        return formats.read_mask_png(self.root / frame_path("mask", frame))

    def rgb(self, frame):
        return formats.read_rgb_png(self.root / frame_path("rgb", frame))

    def masks(self):
        return np.stack([self.mask(i) for i in range(self.record.frame_count)])

    def frames(self):
        for i in range(self.record.frame_count):
            yield FrameSet(rgb=self.rgb(i), depth=self.depth(i), instance_mask=self.mask(i))


def load_sample(sample_dir, validate=True, expected_sha=None):
    sample_dir = Path(sample_dir)
    if validate:
        record = validate_sample(sample_dir, expected_sha)
    else:
        record = load_record(sample_dir, expected_sha)
    return LoadedSample(sample_dir, record)


def load_dataset(root_dir, validate=True):
    root = Path(root_dir)
    return [load_sample(root / e["path"], validate, e["metadata_sha256"]) for e in read_manifest(root)]


def produce_sample(config: SceneConfig, root_dir):
    """Simulate, render and write one scene; returns the manifest entry."""
    traj = simulate(config)
    record = make_record(config)
    frames = (render_frame(traj, i, config.camera, config.resolution, config.objects)
              for i in range(config.frame_count))
    return write_sample(record, root_dir, frames, traj)


def _worker(args):
    seed, preset, root = args
    t0 = time.perf_counter()
    config = sample_scene(seed, preset)
    try:
        entry = produce_sample(config, root)
    except SimulationDiverged as exc:
        return {"seed": seed, "error": str(exc), "kind": "diverged"}
    return entry, round(time.perf_counter() - t0, 3)


@dataclass
class GenerationResult:
    manifest: Path
    written: int
    skipped: int
    failed: list
    summary: dict


def summarize(entries):
    counts = Counter(e["objects"] for e in entries)
    n = len(entries)
    return {
        "samples": n,
        "object_count_histogram": {str(k): counts[k] for k in sorted(counts)},
        "collision_event_rate": (sum(1 for e in entries if e["collision_events"] > 0) / n) if n else 0.0,
        "mean_collision_events": (sum(e["collision_events"] for e in entries) / n) if n else 0.0,
    }


def generate_dataset(preset: Optional[SamplingPreset], count: int, root_dir, seed: int = 0,
                     workers: int = 1, verify_existing: bool = True) -> GenerationResult:
    """Generate samples for seeds ``seed .. seed + count - 1`` under ``root_dir``.

    Samples already listed in the manifest are skipped (after a shallow file
    check when ``verify_existing``). A sample directory that is complete but
    missing from the manifest, e.g. after a crash between rename and append,
    is validated and adopted. Diverged simulations are logged and skipped.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    preset = preset or SamplingPreset()
    root = Path(root_dir)
    root.mkdir(parents=True, exist_ok=True)
    for stale in root.glob(".tmp-*"):
        shutil.rmtree(stale, ignore_errors=True)

    done = {}
    for e in read_manifest(root):
        done[e["scene_id"]] = e
    todo, skipped = [], 0
    for s in range(seed, seed + count):
        sid = scene_id_for(s)
        if sid in done:
            if verify_existing:
                try:
                    validate_sample(root / sid, done[sid]["metadata_sha256"], deep=False)
                    skipped += 1
                    continue
                except ValidationError as exc:
                    log.warning(json.dumps({"event": "invalid_existing", "scene_id": sid,
                                            "reason": str(exc)}))
            else:
                skipped += 1
                continue
        elif (root / sid / "metadata.json").exists():
            entry = _adopt(root, sid)
            if entry is not None:
                append_manifest(root, entry)
                done[sid] = entry
                skipped += 1
                continue
        todo.append(s)

    failed, written = [], 0
    jobs = [(s, preset, str(root)) for s in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_worker, jobs)
            written, failed = _collect(root, results, done)
    else:
        written, failed = _collect(root, map(_worker, jobs), done)

    entries = [done[scene_id_for(s)] for s in range(seed, seed + count) if scene_id_for(s) in done]
    summary = summarize(entries)
    summary.update({"written": written, "skipped": skipped, "failed": len(failed)})
    (root / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    log.info(json.dumps({"event": "summary", **summary}))
    return GenerationResult(root / MANIFEST, written, skipped, failed, summary)


def _adopt(root, sid):
    """Manifest entry for a complete sample directory missing from the manifest."""
    sample = root / sid
    try:
        validate_sample(sample, deep=True)
    except ValidationError:
        return None
    rec = load_record(sample)
    traj = Trajectory.load(sample / "trajectory.bin", sample / "trajectory.events.json")
    return _entry(rec, traj, (sample / "metadata.json").read_bytes())


def _entry(record, trajectory, meta):
    return {
        "scene_id": record.scene_id,
        "seed": record.config.seed,
        "path": record.scene_id,
        "frames": record.frame_count,
        "objects": len(record.config.objects),
        "collision_events": sum(1 for e in trajectory.contact_events if e.j >= 0),
        "metadata_sha256": checksum(meta),
        "format_version": record.format_version,
    }


def _collect(root, results, done):
    written, failed = 0, []
    for r in results:
        if isinstance(r, dict):
            failed.append(r)
            log.error(json.dumps({"event": "sample_failed", **r}))
            continue
        entry, seconds = r
        append_manifest(root, entry)
        done[entry["scene_id"]] = entry
        written += 1
        log.info(json.dumps({"event": "sample_written", "scene_id": entry["scene_id"],
                             "seconds": seconds}))
    return written, failed
