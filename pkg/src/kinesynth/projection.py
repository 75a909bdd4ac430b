"""Pinhole projection of 3-D kinematics and closed-form projectile motion.

Camera frame: x right, y down, z forward. A projectile rising against
gravity therefore has camera ``y`` decreasing and ``ydd = +g`` for a level
camera; pixel ``v`` follows camera ``y``, so a physical upward acceleration
``-g`` shows up as a positive ``vdd`` in image tracks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BehindCameraError


@dataclass(frozen=True)
class Kinematics3D:
    x: float
    y: float
    z: float
    xd: float = 0.0
    yd: float = 0.0
    zd: float = 0.0
    xdd: float = 0.0
    ydd: float = 0.0
    zdd: float = 0.0


def project_kinematics(k: Kinematics3D, f: float, form: str = "exact"):
    """Image-plane velocity and acceleration ``(ud, vd, udd, vdd)`` of a point.

    ``form="exact"`` is the second derivative of ``u = f x / z``, whose
    velocity-coupling term carries a factor 2. ``form="printed"`` keeps that
    term with factor 1, the variant sometimes quoted; both agree when
    ``zd == 0``.

    Raises:
        BehindCameraError: ``z <= 0``.
    """
    if not k.z > 0:
        raise BehindCameraError(f"z must be positive, got {k.z}")
    if form not in ("exact", "printed"):
        raise ValueError("form must be 'exact' or 'printed'")
    c = 2.0 if form == "exact" else 1.0
    z = k.z
    ud = f / z * (k.xd - k.x / z * k.zd)
    vd = f / z * (k.yd - k.y / z * k.zd)
    udd = f / z * (k.xdd - k.x / z * k.zdd) - c * f / z ** 2 * (k.zd * k.xd - k.x / z * k.zd ** 2)
    vdd = f / z * (k.ydd - k.y / z * k.zdd) - c * f / z ** 2 * (k.zd * k.yd - k.y / z * k.zd ** 2)
    return ud, vd, udd, vdd


def projectile_state(v0, theta, g, t, origin=(0.0, 0.0, 5.0)):
    """Projectile launched at ``origin`` (camera frame) in the camera's x-y plane.

    Physical up is camera ``-y``: horizontal velocity ``v0 cos(theta)``,
    upward velocity ``v0 sin(theta) - g t``, so camera ``yd`` is its negative
    and ``ydd = +g``. Depth stays at ``origin[2]`` (fronto-parallel motion).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    vx = v0 * math.cos(theta)
    vup = v0 * math.sin(theta) - g * t
    up = v0 * math.sin(theta) * t - 0.5 * g * t * t
    x0, y0, z0 = origin
    return Kinematics3D(
        x=x0 + vx * t, y=y0 - up, z=z0,
        xd=vx, yd=-vup, zd=0.0,
        xdd=0.0, ydd=g, zdd=0.0,
    )


def flight_time(v0, theta, g):
    """Time to return to launch height."""
    return 2.0 * v0 * math.sin(theta) / g


def projectile_pixels(v0, theta, g, fps, frames, f, principal_point=(0.0, 0.0),
                      origin=(0.0, 0.0, 5.0)):
    """Pixel track ``(frames, 2)`` of a projectile sampled at ``fps``."""
    out = np.zeros((frames, 2))
    for i in range(frames):
        k = projectile_state(v0, theta, g, i / fps, origin)
        out[i] = (f * k.x / k.z + principal_point[0], f * k.y / k.z + principal_point[1])
    return out


def kinematics_table(v0, theta, g, f, fps, frames, origin=(0.0, 0.0, 5.0)):
    """Rows of (t, x, y, z, ud, vd, udd, vdd) for a projectile; used by the CLI."""
    rows = []
    for i in range(frames):
        t = i / fps
        k = projectile_state(v0, theta, g, t, origin)
        rows.append((t, k.x, k.y, k.z, *project_kinematics(k, f)))
    return rows
