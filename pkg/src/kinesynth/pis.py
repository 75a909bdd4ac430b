"""Physical Invariance Score over object tracks extracted from instance masks.

For each object the centroid ``(u, v)`` and apparent size ``l = sqrt(area)``
are tracked per frame; velocities and accelerations come from finite
differences scaled by fps. A determinant sequence ``C`` over a window is
scored as ``(1 + sigma / (|mu| + eps))^-1`` with population sigma.

Windows, per determinant:

* ``a_x``, ``a_y``, ``v_x``: free-flight segments, i.e. runs of frames
  between contact events from simulator metadata; without metadata, the
  longest segment free of detected jumps.
* ``v_y``: free-flight segments further split where ``v_y`` changes sign.
* ``dl``: relative size rate ``(dl/dt) / l`` over every visible run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import EmptyTrackError, InsufficientFramesError, ValidationError

DETERMINANTS = ("a_x", "a_y", "v_x", "v_y", "dl")
EPS = 1e-6
MIN_AREA = 9
MIN_WINDOW = 3
STATIC_SPEED = 0.5  # px / frame


@dataclass
class CentroidTrack:
    obj_id: int
    u: np.ndarray
    v: np.ndarray
    size: np.ndarray
    valid: np.ndarray
    fps: float

    def __len__(self):
        return len(self.u)

    def reversed(self):
        return CentroidTrack(self.obj_id, self.u[::-1].copy(), self.v[::-1].copy(),
                             self.size[::-1].copy(), self.valid[::-1].copy(), self.fps)

    def shifted(self, du, dv):
        return CentroidTrack(self.obj_id, self.u + du, self.v + dv, self.size.copy(),
                             self.valid.copy(), self.fps)


def extract_tracks(masks, fps, ids=None, min_area=MIN_AREA, drop_border=True):
    """Centroid tracks from a (F, H, W) id-mask stack.

    Frames where an object covers fewer than ``min_area`` pixels are invalid,
    as are (with ``drop_border``) frames where its mask touches the image
    border, since a clipped silhouette biases the centroid.

    Raises:
        EmptyTrackError: a requested id never appears.
    """
    masks = np.asarray(masks)
    if masks.ndim != 3:
        raise ValueError(f"masks must be (frames, H, W), got {masks.shape}")
    f, h, w = masks.shape
    present = np.unique(masks)
    if ids is None:
        ids = [int(k) for k in present if k != 0]
    n_ids = int(max(max(ids, default=0), present.max(initial=0))) + 1
    rows = np.arange(h, dtype=float)
    cols = np.arange(w, dtype=float)
    area = np.zeros((f, n_ids))
    su = np.zeros((f, n_ids))
    sv = np.zeros((f, n_ids))
    border = np.zeros((f, n_ids), dtype=bool)
    for i in range(f):
        m = masks[i].astype(np.int64)
        area[i] = np.bincount(m.ravel(), minlength=n_ids)
        su[i] = np.bincount(m.ravel(), weights=np.broadcast_to(cols, (h, w)).ravel(), minlength=n_ids)
        sv[i] = np.bincount(m.ravel(), weights=np.broadcast_to(rows[:, None], (h, w)).ravel(),
                            minlength=n_ids)
        edge = np.concatenate([m[0], m[-1], m[:, 0], m[:, -1]])
        border[i, np.unique(edge)] = True
    tracks = []
    for k in ids:
        a = area[:, k]
        if not np.any(a > 0):
            raise EmptyTrackError(f"object id {k} does not appear in any frame")
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.where(a > 0, su[:, k] / a, np.nan)
            v = np.where(a > 0, sv[:, k] / a, np.nan)
        valid = a >= min_area
        if drop_border:
            valid &= ~border[:, k]
        tracks.append(CentroidTrack(int(k), u, v, np.sqrt(a), valid, float(fps)))
    return tracks


@dataclass
class TrackKinematics:
    """Per-frame derivatives; NaN where undefined."""

    vel: np.ndarray  # (F, 2) px/s
    acc: np.ndarray  # (F, 2) px/s^2
    dl: np.ndarray  # (F,) px/s
    runs: list  # [(start, stop)] valid runs of >= 3 frames


def valid_runs(valid, min_len=MIN_WINDOW):
    runs, start = [], None
    for i, ok in enumerate(list(valid) + [False]):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            if i - start >= min_len:
                runs.append((start, i))
            start = None
    return runs


def _derivatives(x, fps):
    """First and second differences on one run (len >= 3), in per-second units."""
    n = len(x)
    d1 = np.empty(n)
    d1[1:-1] = (x[2:] - x[:-2]) * 0.5
    d1[0] = x[1] - x[0]
    d1[-1] = x[-1] - x[-2]
    d2 = np.empty(n)
    d2[1:-1] = x[2:] - 2 * x[1:-1] + x[:-2]
    d2[0] = d2[1]
    d2[-1] = d2[-2]
    return d1 * fps, d2 * fps * fps


def kinematics(track: CentroidTrack):
    """Central differences inside valid runs, one-sided at run edges.

    Accelerations at run edges repeat the nearest interior value.

    Raises:
        InsufficientFramesError: no run of 3 consecutive valid frames.
    """
    runs = valid_runs(track.valid)
    if not runs:
        raise InsufficientFramesError(f"object {track.obj_id}: fewer than 3 consecutive valid frames")
    n = len(track)
    vel = np.full((n, 2), np.nan)
    acc = np.full((n, 2), np.nan)
    dl = np.full(n, np.nan)
    for s, e in runs:
        for c, x in enumerate((track.u, track.v)):
            d1, d2 = _derivatives(x[s:e], track.fps)
            vel[s:e, c] = d1
            acc[s:e, c] = d2
        dl[s:e] = _derivatives(track.size[s:e], track.fps)[0]
    return TrackKinematics(vel, acc, dl, runs)


def pis_value(mu, sigma, eps=EPS):
    return 1.0 / (1.0 + sigma / (abs(mu) + eps))


@dataclass
class WindowScore:
    start: int
    stop: int
    mu: float
    sigma: float
    score: float

    @property
    def samples(self):
        return self.stop - self.start


def score_window(values, start, stop, eps=EPS):
    seq = np.asarray(values[start:stop], dtype=float)
    if len(seq) < 1 or np.any(~np.isfinite(seq)):
        raise ValueError(f"window [{start}, {stop}) has no finite samples")
    mu = float(seq.mean())
    sigma = float(seq.std())
    return WindowScore(start, stop, mu, sigma, pis_value(mu, sigma, eps))


@dataclass
class DeterminantScore:
    determinant: str
    windows: list
    score: Optional[float]  # sample-weighted mean of window scores

    def to_dict(self):
        return {
            "score": self.score,
            "windows": [{"start": w.start, "stop": w.stop, "mu": w.mu, "sigma": w.sigma,
                         "score": w.score} for w in self.windows],
        }


def _split(windows, cuts):
    """Split ``[(s, e)]`` windows at frame indices in ``cuts`` (cut frames excluded)."""
    cuts = sorted(set(cuts))
    out = []
    for s, e in windows:
        start = s
        for c in cuts:
            if start <= c < e:
                out.append((start, c))
                start = c + 1
        out.append((start, e))
    return [(s, e) for s, e in out if e - s >= MIN_WINDOW]


def contact_cut_frames(contact_frames, margin=1):
    """Frames whose finite differences straddle a contact interval.

    An event in interval ``[k, k+1)`` corrupts central differences centered at
    ``k`` and ``k+1``; ``margin`` widens that on each side.
    """
    cuts = set()
    for k in contact_frames:
        for c in range(k - margin + 1, k + 1 + margin):
            cuts.add(c)
    return cuts


def jump_cut_frames(track: CentroidTrack, kin: TrackKinematics, z=6.0):
    """Contact-free fallback: frames whose jerk is an outlier within its run."""
    cuts = set()
    for s, e in kin.runs:
        for c in range(2):
            a = kin.acc[s:e, c]
            if len(a) < 4:
                continue
            jerk = np.abs(np.diff(a))
            med = np.median(jerk)
            mad = np.median(np.abs(jerk - med)) + 1e-9
            for i in np.nonzero(jerk > med + z * 1.4826 * mad)[0]:
                cuts.update({s + i, s + i + 1})
    return cuts


def sign_cut_frames(values, windows):
    cuts = set()
    for s, e in windows:
        seg = values[s:e]
        for i in range(len(seg) - 1):
            if np.sign(seg[i]) != np.sign(seg[i + 1]):
                cuts.add(s + i + 1 if abs(seg[i + 1]) < abs(seg[i]) else s + i)
    return cuts


def determinant_sequences(track: CentroidTrack, kin: TrackKinematics):
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = kin.dl / track.size
    return {
        "a_x": kin.acc[:, 0],
        "a_y": kin.acc[:, 1],
        "v_x": kin.vel[:, 0],
        "v_y": kin.vel[:, 1],
        "dl": rel,
    }


def determinant_windows(track, kin, seqs, contact_frames=None):
    runs = list(kin.runs)
    if contact_frames is not None:
        cuts = contact_cut_frames(contact_frames)
    else:
        cuts = jump_cut_frames(track, kin)
    flight = _split(runs, cuts)
    if contact_frames is None and flight:
        flight = [max(flight, key=lambda w: w[1] - w[0])]
    return {
        "a_x": flight,
        "a_y": flight,
        "v_x": flight,
        "v_y": _split(flight, sign_cut_frames(seqs["v_y"], flight)),
        "dl": [(s, e) for s, e in runs if e - s >= MIN_WINDOW],
    }


def pis_score(values, windows, determinant="C", eps=EPS):
    """Score a determinant sequence over windows.

    Each window gets its own ``(mu, sigma, score)``; the determinant's score
    is the sample-weighted mean of its window scores.

    Raises:
        ValueError: no window has at least 3 samples.
    """
    ws = [score_window(values, s, e, eps) for s, e in windows if e - s >= MIN_WINDOW]
    if not ws:
        raise ValueError(f"{determinant}: no window with >= {MIN_WINDOW} samples")
    total = sum(w.samples for w in ws)
    return DeterminantScore(determinant, ws, float(sum(w.score * w.samples for w in ws) / total))


@dataclass
class ObjectReport:
    obj_id: int
    static: bool
    scores: dict  # determinant -> DeterminantScore | None
    valid_frames: int

    def to_dict(self):
        return {
            "object_id": self.obj_id,
            "static": self.static,
            "valid_frames": self.valid_frames,
            "determinants": {k: (v.to_dict() if v is not None else None) for k, v in self.scores.items()},
        }


@dataclass
class PISReport:
    objects: list
    mean: dict  # determinant -> mean over scored objects (or None)
    eps: float = EPS
    skipped: dict = field(default_factory=dict)
    seed: Optional[int] = None

    def to_dict(self):
        return {
            "seed": self.seed,
            "eps": self.eps,
            "mean": self.mean,
            "objects": [o.to_dict() for o in self.objects],
            "skipped": {str(k): v for k, v in self.skipped.items()},
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def score_track(track: CentroidTrack, contact_frames=None, eps=EPS):
    kin = kinematics(track)
    seqs = determinant_sequences(track, kin)
    wins = determinant_windows(track, kin, seqs, contact_frames)
    speed = np.nanmax(np.hypot(kin.vel[:, 0], kin.vel[:, 1])) / track.fps
    static = bool(speed < STATIC_SPEED)
    scores = {}
    for d in DETERMINANTS:
        try:
            scores[d] = pis_score(seqs[d], wins[d], d, eps)
        except ValueError:
            scores[d] = None
    return ObjectReport(track.obj_id, static, scores, int(track.valid.sum()))


def aggregate(objects, skipped=None, eps=EPS, include_static=False):
    mean = {}
    for d in DETERMINANTS:
        vals = [o.scores[d].score for o in objects
                if o.scores.get(d) is not None and (include_static or not o.static)]
        mean[d] = float(np.mean(vals)) if vals else None
    return PISReport(objects, mean, eps, skipped or {})


def evaluate_tracks(tracks, contact_frames=None, eps=EPS):
    """Score every track; ``contact_frames`` maps object id to contact frame indices."""
    objects, skipped = [], {}
    for t in tracks:
        try:
            cf = None if contact_frames is None else contact_frames.get(t.obj_id, [])
            objects.append(score_track(t, cf, eps))
        except InsufficientFramesError as exc:
            skipped[t.obj_id] = str(exc)
    if not objects:
        raise EmptyTrackError("no trackable objects")
    return aggregate(objects, skipped, eps)


def evaluate_masks(masks, fps, ids=None, contact_frames=None, eps=EPS):
    tracks, skipped = [], {}
    for k in (ids if ids is not None else [None]):
        try:
            tracks += extract_tracks(masks, fps, None if k is None else [k])
        except EmptyTrackError as exc:
            skipped[k] = str(exc)
    if not tracks:
        raise EmptyTrackError("no trackable objects")
    report = evaluate_tracks(tracks, contact_frames, eps)
    report.skipped.update(skipped)
    return report


def write_series(tracks, directory, contact_frames=None):
    """One CSV per object: frame, validity, centroid, size and the five determinants."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in tracks:
        try:
            kin = kinematics(t)
        except InsufficientFramesError:
            continue
        seqs = determinant_sequences(t, kin)
        cols = [np.arange(len(t)), t.valid.astype(int), t.u, t.v, t.size] + [seqs[d] for d in DETERMINANTS]
        path = directory / f"object_{t.obj_id:03d}.csv"
        header = "frame,valid,u,v,l," + ",".join(DETERMINANTS)
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.9g")
        paths.append(path)
    return paths


def evaluate_video(source, fps=None, use_contacts=True, eps=EPS, series_dir=None):
    """Score a dataset sample directory or a directory of id-mask PNGs.

    For a sample, contact events from the trajectory sidecar define the
    free-flight windows; a bare mask directory falls back to jump detection
    and needs ``fps``. ``series_dir`` receives per-object CSV time series.
    """
    from .dataset import load_sample
    from .formats import read_mask_png

    source = Path(source)
    seed, contacts, ids = None, None, None
    if (source / "metadata.json").exists():
        sample = load_sample(source, validate=False)
        cfg = sample.record.config
        masks = sample.masks()
        fps = fps or cfg.fps
        seed = cfg.seed
        if use_contacts:
            traj = sample.trajectory
            contacts = {k + 1: traj.contact_frames(k) for k in range(traj.object_count)}
        ids = list(range(1, len(cfg.objects) + 1))
    else:
        files = sorted(source.glob("*.png"))
        if not files:
            raise ValidationError(source, "mask", "no mask PNGs found")
        if fps is None:
            raise ValueError("fps is required for a bare mask directory")
        masks = np.stack([read_mask_png(p) for p in files])
    report = evaluate_masks(masks, fps, ids, contacts, eps)
    report.seed = seed
    if series_dir is not None:
        present = [k for k in (ids or np.unique(masks)) if k != 0 and np.any(masks == k)]
        write_series(extract_tracks(masks, fps, present), series_dir, contacts)
    return report


class PISScorer(BaseEstimator):
    """Estimator-style wrapper: ``fit`` on tracks, ``score`` = mean of determinant means."""

    def __init__(self, eps=EPS, determinants=DETERMINANTS):
        self.eps = eps
        self.determinants = determinants

    def fit(self, tracks, contact_frames=None):
        self.report_ = evaluate_tracks(tracks, contact_frames, self.eps)
        return self

    def score(self, tracks=None, contact_frames=None):
        report = self.report_ if tracks is None else evaluate_tracks(tracks, contact_frames, self.eps)
        vals = [report.mean[d] for d in self.determinants if report.mean[d] is not None]
        return float(np.mean(vals)) if vals else float("nan")
