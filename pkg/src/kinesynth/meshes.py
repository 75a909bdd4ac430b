"""Triangle meshes for the rendered primitives, centered on the body origin.

All meshes are convex and returned with outward (counter-clockwise seen from
outside) winding so back-face culling can use the sign of the face normal.
"""

from functools import lru_cache

import numpy as np


def _orient_outward(vertices, faces):
    """Flip faces whose normal points toward the (convex) mesh centroid."""
    center = vertices.mean(axis=0)
    tri = vertices[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    inward = np.einsum("ij,ij->i", n, tri.mean(axis=1) - center) < 0
    faces = faces.copy()
    faces[inward] = faces[inward][:, ::-1]
    return faces


@lru_cache(maxsize=None)
def icosphere(subdivisions=2):
    """Unit-radius icosphere; 2 subdivisions give 320 faces."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts)
    return v, _orient_outward(v, np.array(faces, dtype=np.int64))


@lru_cache(maxsize=None)
def box():
    """Cube with half-extent 1 (12 triangles)."""
    v = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return v, _orient_outward(v, np.array(faces, dtype=np.int64))


@lru_cache(maxsize=None)
def cylinder(segments=32):
    """Radius 1, height 2 along y (y in [-1, 1])."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([np.cos(ang), np.zeros(segments), np.sin(ang)], axis=1)
    bottom, top = ring + [0, -1, 0], ring + [0, 1, 0]
    v = np.vstack([bottom, top, [[0, -1, 0], [0, 1, 0]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for k in range(segments):
        n = (k + 1) % segments
        faces += [(k, n, segments + n), (k, segments + n, segments + k)]
        faces += [(cb, n, k), (ct, segments + k, segments + n)]
    return v, _orient_outward(v, np.array(faces, dtype=np.int64))


@lru_cache(maxsize=None)
def cone(segments=32):
    """Base radius 1 at y=-1, apex at y=+1."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([np.cos(ang), -np.ones(segments), np.sin(ang)], axis=1)
    v = np.vstack([ring, [[0, 1, 0], [0, -1, 0]]])
    apex, cb = segments, segments + 1
    faces = []
    for k in range(segments):
        n = (k + 1) % segments
        faces += [(k, n, apex), (cb, n, k)]
    return v, _orient_outward(v, np.array(faces, dtype=np.int64))


def shape_mesh(shape_kind, size):
    """Vertices (scaled to ``size``) and faces for a scene shape."""
    half = 0.5 * size
    if shape_kind in ("sphere", "icosphere"):
        v, f = icosphere(2)
    elif shape_kind == "box":
        v, f = box()
    elif shape_kind == "cylinder":
        v, f = cylinder(32)
    elif shape_kind == "cone":
        v, f = cone(32)
    else:
        raise ValueError(f"unknown shape kind {shape_kind!r}")
    return v * half, f
