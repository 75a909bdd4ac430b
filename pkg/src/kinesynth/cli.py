"""Command-line entry point.

Exit codes: 0 success, 1 validation failure (bad input, bad config, failed
check), 2 runtime failure. Logs go to stderr as JSON lines.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .exceptions import (
    BehindCameraError,
    ConfigurationError,
    EmptyTrackError,
    InsufficientFramesError,
    KinesynthError,
    ShapeMismatchError,
    ValidationError,
)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (ConfigurationError, ValidationError, ShapeMismatchError, EmptyTrackError,
                     InsufficientFramesError, BehindCameraError, ValueError)

log = logging.getLogger("kinesynth.cli")


class JsonFormatter(logging.Formatter):
    """One JSON object per record; messages that are JSON objects are merged in."""

    def format(self, record):
        out = {"level": record.levelname.lower(), "logger": record.name}
        msg = record.getMessage()
        try:
            parsed = json.loads(msg)
        except ValueError:
            parsed = None
        if isinstance(parsed, dict):
            out.update(parsed)
        else:
            out["message"] = msg
        return json.dumps(out, sort_keys=True)


def setup_logging(level):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger("kinesynth")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


class ValidationFailed(Exception):
    """A check ran and failed; maps to exit code 1."""


def _emit(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
        log.info(json.dumps({"event": "wrote", "path": str(out)}))
    return text


@click.group()
@click.version_option(__version__)
@click.option("--log-level", default="info", show_default=True,
              type=click.Choice(["debug", "info", "warning", "error"]))
def main(log_level):
    """Synthetic physics video data, alignment losses and the invariance score."""
    setup_logging(log_level)


def _preset(path, res, frames):
    from .scene import load_preset

    preset = load_preset(path)
    kw = {}
    if res is not None:
        kw["resolution"] = (res, res)
    if frames is not None:
        kw["frame_count"] = frames
    return preset.with_overrides(**kw) if kw else preset


def _default_workers():
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


@main.command()
@click.option("--count", default=3000, show_default=True, type=click.IntRange(min=1))
@click.option("--preset", "preset_path", type=click.Path(dir_okay=False), default=None,
              help="YAML preset with parameter ranges.")
@click.option("--seed", default=0, show_default=True, type=int, help="First scene seed.")
@click.option("--out", envvar="KINESYNTH_OUT", default="dataset", show_default=True,
              type=click.Path(file_okay=False), help="Output root [env KINESYNTH_OUT].")
@click.option("--workers", envvar="KINESYNTH_WORKERS", default=None, type=click.IntRange(min=1),
              help="Worker processes [env KINESYNTH_WORKERS; default: available cores].")
@click.option("--res", default=None, type=click.IntRange(min=1), help="Square resolution override.")
@click.option("--frames", default=None, type=click.IntRange(min=2), help="Frame count override.")
def generate(count, preset_path, seed, out, workers, res, frames):
    """Generate (or resume) a dataset of COUNT scenes."""
    from .dataset import generate_dataset

    preset = _preset(preset_path, res, frames)
    result = generate_dataset(preset, count, out, seed=seed, workers=workers or _default_workers())
    report = {"seed": seed, "count": count, "manifest": str(result.manifest),
              "written": result.written, "skipped": result.skipped, "failed": result.failed,
              "summary": result.summary}
    click.echo(_emit(report, None))
    if result.failed:
        raise RuntimeError(f"{len(result.failed)} samples failed")


@main.command()
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--preset", "preset_path", type=click.Path(dir_okay=False), default=None)
@click.option("--out", envvar="KINESYNTH_OUT", default="scene", show_default=True,
              type=click.Path(file_okay=False))
@click.option("--res", default=None, type=click.IntRange(min=1))
@click.option("--frames", default=None, type=click.IntRange(min=2))
@click.option("--render/--no-render", default=True, show_default=True,
              help="Write a full sample, or only the trajectory and its events.")
def simulate(seed, preset_path, out, res, frames, render):
    """Simulate one scene and write it under OUT."""
    from .dataset import produce_sample
    from .scene import sample_scene
    from .sim import simulate as run

    config = sample_scene(seed, _preset(preset_path, res, frames))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if render:
        entry = produce_sample(config, out)
        click.echo(_emit({"seed": seed, **entry}, None))
        return
    traj = run(config)
    path = out / f"scene_{seed:08d}.traj.bin"
    traj.save(path, path.with_suffix(".events.json"))
    (out / f"scene_{seed:08d}.config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
    click.echo(_emit({"seed": seed, "trajectory": str(path), "frames": traj.frame_count,
                      "objects": traj.object_count, "contact_events": len(traj.contact_events)}, None))


@main.group()
def losses():
    """Evaluate or gradient-check the alignment and depth losses."""


def _which(phys, depth, all_):
    if all_ or not (phys or depth):
        return True, True
    return phys, depth


@losses.command()
@click.option("--phys", is_flag=True)
@click.option("--depth", is_flag=True)
@click.option("--all", "all_", is_flag=True)
@click.option("--trials", default=20, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def gradcheck(phys, depth, all_, trials, seed, out):
    """Finite-difference check of each analytic gradient (fails above 1e-4)."""
    from .gradcheck import check_loss

    do_phys, do_depth = _which(phys, depth, all_)
    names = (["phys"] if do_phys else []) + (["latent", "pixel", "structure", "temporal"] if do_depth else [])
    results = [check_loss(n, trials, seed + k) for k, n in enumerate(names)]
    for r in results:
        click.echo(f"{r.loss:<10} max_rel_err={r.max_error:.3e} {'ok' if r.passed else 'FAIL'}")
    _emit({"seed": seed, "trials": trials, "results": [r.to_dict() for r in results]}, out)
    if not all(r.passed for r in results):
        raise ValidationFailed("gradient check above tolerance")


def _fixtures(seed, identical):
    rng = np.random.default_rng(seed)
    teacher = rng.normal(size=(1, 2, 3, 3, 8))
    student = teacher.copy() if identical else rng.normal(size=teacher.shape)
    target_depth = rng.uniform(1.0, 5.0, size=(1, 1, 4, 6, 6))
    pred_depth = (0.5 * target_depth + 0.2) if identical else target_depth + rng.normal(scale=0.3, size=target_depth.shape)
    target_latent = rng.normal(size=(1, 4, 4, 3, 3))
    pred_latent = target_latent.copy() if identical else rng.normal(size=target_latent.shape)
    return student, teacher, pred_latent, target_latent, pred_depth, target_depth


@losses.command(name="eval")
@click.option("--phys", is_flag=True)
@click.option("--depth", is_flag=True)
@click.option("--all", "all_", is_flag=True)
@click.option("--student", type=click.Path(exists=True, dir_okay=False), help=".f32g student grid")
@click.option("--teacher", type=click.Path(exists=True, dir_okay=False), help=".f32g teacher grid")
@click.option("--pred-latent", type=click.Path(exists=True, dir_okay=False))
@click.option("--target-latent", type=click.Path(exists=True, dir_okay=False))
@click.option("--pred-depth", type=click.Path(exists=True, dir_okay=False))
@click.option("--target-depth", type=click.Path(exists=True, dir_okay=False))
@click.option("--identical", is_flag=True,
              help="Built-in fixtures with student = teacher and an affine depth pair.")
@click.option("--l-fm", default=0.0, show_default=True, type=float)
@click.option("--lambda-phys", default=0.25, show_default=True, type=click.FloatRange(min=0))
@click.option("--lambda-3d", default=1.0, show_default=True, type=click.FloatRange(min=0))
@click.option("--margin", default=0.1, show_default=True, type=click.FloatRange(min=0))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def eval_(phys, depth, all_, student, teacher, pred_latent, target_latent, pred_depth, target_depth,
          identical, l_fm, lambda_phys, lambda_3d, margin, seed, out):
    """Evaluate losses on .f32g tensors, or on built-in fixtures."""
    from .formats import read_tensor
    from .objective import ObjectiveWeights, total_loss

    do_phys, do_depth = _which(phys, depth, all_)
    fx = _fixtures(seed, identical)
    s = read_tensor(student) if student else fx[0]
    t = read_tensor(teacher) if teacher else fx[1]
    pl = read_tensor(pred_latent) if pred_latent else fx[2]
    tl = read_tensor(target_latent) if target_latent else fx[3]
    pd = read_tensor(pred_depth) if pred_depth else fx[4]
    td = read_tensor(target_depth) if target_depth else fx[5]
    weights = ObjectiveWeights(lambda_phys=lambda_phys, lambda_3d=lambda_3d, margin=margin)
    res = total_loss(l_fm, (s, t) if do_phys else None, (pl, tl, pd, td) if do_depth else None, weights)
    report = {"seed": seed, "weights": {"lambda_phys": lambda_phys, "lambda_3d": lambda_3d,
                                        "margin": margin}, **res.breakdown()}
    for k, v in res.breakdown().items():
        click.echo(f"{k:<12} {v:.9g}")
    _emit(report, out)


@main.command(name="eval-pis")
@click.argument("source", type=click.Path(exists=True, file_okay=False))
@click.option("--fps", default=None, type=click.FloatRange(min=0, min_open=True),
              help="Frame rate; required for a bare mask directory.")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="JSON report path.")
@click.option("--series", default=None, type=click.Path(file_okay=False),
              help="Directory for per-object determinant time series (CSV).")
@click.option("--no-contacts", is_flag=True, help="Ignore simulator contact events.")
def eval_pis(source, fps, out, series, no_contacts):
    """Physical Invariance Score of a sample directory or a mask directory."""
    from .pis import DETERMINANTS, evaluate_video

    report = evaluate_video(source, fps=fps, use_contacts=not no_contacts, series_dir=series)
    click.echo(f"{'determinant':<12} {'mean':>8}")
    for d in DETERMINANTS:
        v = report.mean[d]
        click.echo(f"{d:<12} {'n/a' if v is None else f'{v:.3f}':>8}")
    _emit({"source": str(source), "seed": report.seed, **report.to_dict()}, out)


@main.command()
@click.option("--v0", default=5.0, show_default=True, type=float, help="Launch speed, m/s.")
@click.option("--theta", default=45.0, show_default=True, type=float, help="Launch angle, degrees.")
@click.option("--g", "gravity", default=9.81, show_default=True, type=float)
@click.option("--f", "focal", default=500.0, show_default=True, type=click.FloatRange(min=0, min_open=True))
@click.option("--fps", default=24.0, show_default=True, type=click.FloatRange(min=0, min_open=True))
@click.option("--frames", default=None, type=click.IntRange(min=1),
              help="Rows to print; default covers the flight.")
@click.option("--depth", "z0", default=5.0, show_default=True, type=click.FloatRange(min=0, min_open=True))
def project(v0, theta, gravity, focal, fps, frames, z0):
    """Print projected velocities and accelerations of a projectile."""
    import math

    from .projection import flight_time, kinematics_table

    th = math.radians(theta)
    if frames is None:
        frames = max(1, int(flight_time(v0, th, gravity) * fps) + 1)
    click.echo("t,x,y,z,u_dot,v_dot,u_ddot,v_ddot")
    for row in kinematics_table(v0, th, gravity, focal, fps, frames, origin=(0.0, 0.0, z0)):
        click.echo(",".join(f"{v:.6g}" for v in row))


def run(argv=None):
    """Console entry point with the stable exit-code contract."""
    try:
        main.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_RUNTIME
    except click.ClickException as exc:
        exc.show()
        return EXIT_VALIDATION
    except (ValidationFailed, *VALIDATION_ERRORS) as exc:
        log.error(json.dumps({"event": "validation_failure", "error": str(exc)}))
        return EXIT_VALIDATION
    except (KinesynthError, RuntimeError, OSError) as exc:
        log.error(json.dumps({"event": "runtime_failure", "error": str(exc)}))
        return EXIT_RUNTIME
    return EXIT_OK


def entry():
    sys.exit(run())


if __name__ == "__main__":
    entry()
