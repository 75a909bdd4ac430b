"""Small rigid-body geometry helpers: quaternions, boxes, distance queries."""

import math

import numpy as np

_BOX_SIGNS = np.array(
    [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float
)
# index pairs of the 12 box edges (vertices differing in one sign)
_BOX_EDGES = [
    (a, b)
    for a in range(8)
    for b in range(a + 1, 8)
    if np.sum(_BOX_SIGNS[a] != _BOX_SIGNS[b]) == 1
]


def cross(a, b):
    """3-vector cross product; much cheaper than ``np.cross`` for single vectors."""
    return np.array(
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    )


def norm(a):
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_integrate(q, omega, dt):
    """Rotate ``q`` by world angular velocity ``omega`` over ``dt`` (exact axis-angle)."""
    speed = math.sqrt(omega[0] ** 2 + omega[1] ** 2 + omega[2] ** 2)
    if speed * dt < 1e-15:
        return q
    half = 0.5 * speed * dt
    s = math.sin(half) / speed
    dq = np.array([math.cos(half), omega[0] * s, omega[1] * s, omega[2] * s])
    out = quat_mul(dq, q)
    return out / math.sqrt(out @ out)


def box_vertices(center, rot, half):
    return center + (half * _BOX_SIGNS) @ rot.T


def box_edges():
    return _BOX_EDGES


def point_box_closest(p, center, rot, half):
    """Closest point on a solid box to ``p`` and whether ``p`` is inside."""
    local = rot.T @ (p - center)
    clamped = np.clip(local, -half, half)
    inside = bool(np.all(np.abs(local) <= half))
    return center + rot @ clamped, inside, local


def segment_closest(p1, q1, p2, q2):
    """Closest points between segments p1-q1 and p2-q2."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    c = d1 @ r
    b = d1 @ d2
    denom = a * e - b * b
    s = 0.0 if denom < 1e-14 else min(max((b * f - c * e) / denom, 0.0), 1.0)
    t = (b * s + f) / e if e > 0 else 0.0
    if t < 0.0:
        t = 0.0
        s = min(max(-c / a, 0.0), 1.0) if a > 0 else 0.0
    elif t > 1.0:
        t = 1.0
        s = min(max((b - c) / a, 0.0), 1.0) if a > 0 else 0.0
    return p1 + d1 * s, p2 + d2 * t


def box_box_sat(ca, ra, ha, cb, rb, hb):
    """Separating-axis test between two oriented boxes.

    Returns ``(separation, axis)`` where ``separation`` is the largest projected
    gap over the 15 candidate axes (negative when overlapping: the minimum
    penetration) and ``axis`` is a unit vector pointing from b to a. For
    separated boxes the separation never exceeds the true distance, which is
    what conservative advancement needs.
    """
    d = ca - cb
    axes = [ra[:, 0], ra[:, 1], ra[:, 2], rb[:, 0], rb[:, 1], rb[:, 2]]
    for i in range(3):
        for j in range(3):
            c = cross(ra[:, i], rb[:, j])
            n = norm(c)
            if n > 1e-9:
                axes.append(c / n)
    best = -math.inf
    best_axis = None
    for ax in axes:
        pa = abs(ra[:, 0] @ ax) * ha[0] + abs(ra[:, 1] @ ax) * ha[1] + abs(ra[:, 2] @ ax) * ha[2]
        pb = abs(rb[:, 0] @ ax) * hb[0] + abs(rb[:, 1] @ ax) * hb[1] + abs(rb[:, 2] @ ax) * hb[2]
        dist = d @ ax
        gap = abs(dist) - pa - pb
        if gap > best:
            best = gap
            best_axis = ax if dist >= 0 else -ax
    return best, best_axis
