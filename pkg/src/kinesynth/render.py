"""Software rasterizer: RGB, planar depth and instance masks under a pinhole camera.

Camera space is x right, y down, z forward; pixel ``(row, col)`` has its
center at ``(u, v) = (col, row)``. Depth is camera-space z, written by the
z-test before shading. Background pixels carry ``camera.far``.

Spheres are ray-cast analytically (exact depth and silhouette). Boxes,
cylinders, cones and icospheres are triangle meshes with back-face culling.
The ground plane y=0 is ray-cast as well and belongs to mask id 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .exceptions import BehindCameraError, ConfigurationError
from .geometry import quat_to_matrix
from .meshes import shape_mesh

AMBIENT = 0.25
LIGHT_DIRECTION = np.array([0.35, 1.0, 0.25]) / np.linalg.norm([0.35, 1.0, 0.25])
GROUND_COLOR = (150, 150, 150)
BACKGROUND_COLOR = (0, 0, 0)


@dataclass
class FrameSet:
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float32, metres
    instance_mask: np.ndarray  # (H, W) uint8, 0 = background/ground


@dataclass
class RenderInstance:
    """One object to draw: world pose, shape and flat color; ``obj_id`` >= 1."""

    shape_kind: str
    size: float
    position: np.ndarray
    rotation: np.ndarray  # 3x3 body-to-world
    color: tuple
    obj_id: int


def camera_basis(camera):
    """World-to-camera rotation (rows: right, down, forward).

    Raises:
        ConfigurationError: camera position equals its look-at point.
    """
    eye = np.asarray(camera.position, dtype=float)
    fwd = np.asarray(camera.look_at, dtype=float) - eye
    length = np.linalg.norm(fwd)
    if not length > 1e-12:
        raise ConfigurationError("degenerate camera: position equals look_at")
    fwd = fwd / length
    up = np.array([0.0, 1.0, 0.0])
    if abs(fwd @ up) > 1.0 - 1e-9:
        up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd])


def world_to_camera(p, camera):
    rot = camera_basis(camera)
    return (np.asarray(p, dtype=float) - np.asarray(camera.position, dtype=float)) @ rot.T


def project_camera_point(pc, focal_length, principal_point, near=0.0):
    """Pinhole projection of a camera-space point: ``u = f x / z + cx``."""
    x, y, z = (float(c) for c in pc)
    if z <= near:
        raise BehindCameraError(f"point at camera depth {z:.6g} is not beyond near plane {near:.6g}")
    return (focal_length * x / z + principal_point[0], focal_length * y / z + principal_point[1])


def project_point(p, camera):
    """Project a world-space point to pixel coordinates ``(u, v)``.

    Raises:
        BehindCameraError: camera-space z is at or behind the near plane.
    """
    pc = world_to_camera(p, camera)
    return project_camera_point(pc, camera.focal_length, camera.principal_point, camera.near)


# -- kernels --------------------------------------------------------------

@njit(cache=True)
def _raster_triangles(tri, shade, ids, f, cx, cy, near, depth, mask, rgb):
    h, w = depth.shape
    for k in range(tri.shape[0]):
        z0, z1, z2 = tri[k, 0, 2], tri[k, 1, 2], tri[k, 2, 2]
        if z0 <= near or z1 <= near or z2 <= near:
            continue
        # back-face culling: camera at origin
        e1 = tri[k, 1] - tri[k, 0]
        e2 = tri[k, 2] - tri[k, 0]
        nx = e1[1] * e2[2] - e1[2] * e2[1]
        ny = e1[2] * e2[0] - e1[0] * e2[2]
        nz = e1[0] * e2[1] - e1[1] * e2[0]
        if nx * tri[k, 0, 0] + ny * tri[k, 0, 1] + nz * tri[k, 0, 2] >= 0.0:
            continue
        u0, v0 = f * tri[k, 0, 0] / z0 + cx, f * tri[k, 0, 1] / z0 + cy
        u1, v1 = f * tri[k, 1, 0] / z1 + cx, f * tri[k, 1, 1] / z1 + cy
        u2, v2 = f * tri[k, 2, 0] / z2 + cx, f * tri[k, 2, 1] / z2 + cy
        area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
        if area == 0.0:
            continue
        c0 = max(int(math.ceil(min(u0, u1, u2))), 0)
        c1 = min(int(math.floor(max(u0, u1, u2))), w - 1)
        r0 = max(int(math.ceil(min(v0, v1, v2))), 0)
        r1 = min(int(math.floor(max(v0, v1, v2))), h - 1)
        inv_area = 1.0 / area
        for r in range(r0, r1 + 1):
            for c in range(c0, c1 + 1):
                b0 = ((u1 - c) * (v2 - r) - (v1 - r) * (u2 - c)) * inv_area
                b1 = ((u2 - c) * (v0 - r) - (v2 - r) * (u0 - c)) * inv_area
                b2 = 1.0 - b0 - b1
                if b0 < 0.0 or b1 < 0.0 or b2 < 0.0:
                    continue
                z = 1.0 / (b0 / z0 + b1 / z1 + b2 / z2)
                if z < depth[r, c]:
                    depth[r, c] = z
                    mask[r, c] = ids[k]
                    rgb[r, c, 0] = shade[k, 0]
                    rgb[r, c, 1] = shade[k, 1]
                    rgb[r, c, 2] = shade[k, 2]


@njit(cache=True)
def _raster_sphere(center, radius, color, light, ambient, obj_id, f, cx, cy, near,
                   depth, mask, rgb):
    h, w = depth.shape
    x, y, z = center[0], center[1], center[2]
    if z - radius <= near:
        c0, c1, r0, r1 = 0, w - 1, 0, h - 1
    else:
        ulo, uhi, vlo, vhi = 1e300, -1e300, 1e300, -1e300
        for sx in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                q = (x + sx * radius) / (z + sz * radius)
                ulo, uhi = min(ulo, q), max(uhi, q)
                q = (y + sx * radius) / (z + sz * radius)
                vlo, vhi = min(vlo, q), max(vhi, q)
        c0 = max(int(math.ceil(f * ulo + cx)), 0)
        c1 = min(int(math.floor(f * uhi + cx)), w - 1)
        r0 = max(int(math.ceil(f * vlo + cy)), 0)
        r1 = min(int(math.floor(f * vhi + cy)), h - 1)
    cc = x * x + y * y + z * z - radius * radius
    for r in range(r0, r1 + 1):
        dy = (r - cy) / f
        for c in range(c0, c1 + 1):
            dx = (c - cx) / f
            a = dx * dx + dy * dy + 1.0
            b = dx * x + dy * y + z
            disc = b * b - a * cc
            if disc < 0.0:
                continue
            t = (b - math.sqrt(disc)) / a
            if t <= near or t >= depth[r, c]:
                continue
            depth[r, c] = t
            mask[r, c] = obj_id
            nx = (t * dx - x) / radius
            ny = (t * dy - y) / radius
            nz = (t - z) / radius
            lam = max(0.0, nx * light[0] + ny * light[1] + nz * light[2])
            s = ambient + (1.0 - ambient) * lam
            rgb[r, c, 0] = color[0] * s
            rgb[r, c, 1] = color[1] * s
            rgb[r, c, 2] = color[2] * s


def _ground(camera, rot, h, w, depth, rgb, light_cam):
    """Ray-cast the plane y=0 (camera must be above it to see its top side)."""
    eye = np.asarray(camera.position, dtype=float)
    if eye[1] <= 0:
        return
    f = camera.focal_length
    cx, cy = camera.principal_point
    cols = (np.arange(w) - cx) / f
    rows = (np.arange(h) - cy) / f
    # world-space y component of the camera ray (x_c, y_c, 1)
    dwy = rot[0, 1] * cols[None, :] + rot[1, 1] * rows[:, None] + rot[2, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dwy < 0, -eye[1] / dwy, np.inf)
    hit = (t > camera.near) & (t < camera.far) & (t < depth)
    depth[hit] = t[hit]
    normal_cam = rot @ np.array([0.0, 1.0, 0.0])
    s = AMBIENT + (1 - AMBIENT) * max(0.0, float(normal_cam @ light_cam))
    rgb[hit] = np.array(GROUND_COLOR, dtype=float) * s


def render_instances(instances, camera, resolution, ground=True):
    """Rasterize a list of :class:`RenderInstance` into a :class:`FrameSet`."""
    h, w = (int(v) for v in resolution)
    if h <= 0 or w <= 0:
        raise ConfigurationError(f"resolution must be positive, got {resolution}")
    rot = camera_basis(camera)
    eye = np.asarray(camera.position, dtype=float)
    f = float(camera.focal_length)
    cx, cy = (float(v) for v in camera.principal_point)
    near = float(camera.near)
    light_cam = rot @ LIGHT_DIRECTION

    depth = np.full((h, w), float(camera.far))
    mask = np.zeros((h, w), dtype=np.uint8)
    rgb = np.zeros((h, w, 3))
    rgb[:] = BACKGROUND_COLOR
    if ground:
        _ground(camera, rot, h, w, depth, rgb, light_cam)

    tris, shades, ids = [], [], []
    for inst in instances:
        center = (np.asarray(inst.position, dtype=float) - eye) @ rot.T
        color = np.asarray(inst.color, dtype=float)
        if inst.shape_kind == "sphere":
            _raster_sphere(center, 0.5 * inst.size, color, light_cam, AMBIENT, inst.obj_id,
                           f, cx, cy, near, depth, mask, rgb)
            continue
        verts, faces = shape_mesh(inst.shape_kind, inst.size)
        cam = (verts @ np.asarray(inst.rotation).T + inst.position - eye) @ rot.T
        tri = cam[faces]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        lam = np.clip(n @ light_cam, 0.0, None)
        tris.append(tri)
        shades.append(color[None, :] * (AMBIENT + (1 - AMBIENT) * lam)[:, None])
        ids.append(np.full(len(faces), inst.obj_id, dtype=np.uint8))
    if tris:
        _raster_triangles(np.concatenate(tris), np.concatenate(shades), np.concatenate(ids),
                          f, cx, cy, near, depth, mask, rgb)
    rgb8 = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    return FrameSet(rgb=rgb8, depth=depth.astype(np.float32), instance_mask=mask)


def frame_instances(trajectory, frame_index, objects):
    """Render instances for every object of a trajectory frame (ids start at 1)."""
    if not 0 <= frame_index < trajectory.frame_count:
        raise IndexError(f"frame {frame_index} outside trajectory of {trajectory.frame_count} frames")
    return [
        RenderInstance(
            shape_kind=o.shape_kind,
            size=o.characteristic_size,
            position=trajectory.positions[frame_index, k],
            rotation=quat_to_matrix(trajectory.orientations[frame_index, k]),
            color=o.color,
            obj_id=k + 1,
        )
        for k, o in enumerate(objects)
    ]


def render_frame(trajectory, frame_index, camera, resolution, objects, ground=True):
    """Render one trajectory frame; ``objects`` supplies shapes, sizes and colors."""
    return render_instances(frame_instances(trajectory, frame_index, objects),
                            camera, resolution, ground=ground)
