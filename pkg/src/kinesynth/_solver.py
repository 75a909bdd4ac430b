"""Compiled contact solver core (restitution pass + projected Gauss-Seidel).

Works on flat arrays so the per-iteration cost stays in machine code. Body
``-1`` is the static ground. Velocities ``v``/``w`` are updated in place.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _cross(a0, a1, a2, b0, b1, b2):
    return a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0


@njit(cache=True)
def _rel_vel(v, w, pos, k, p, out, sign):
    if k < 0:
        return
    r0, r1, r2 = p[0] - pos[k, 0], p[1] - pos[k, 1], p[2] - pos[k, 2]
    c0, c1, c2 = _cross(w[k, 0], w[k, 1], w[k, 2], r0, r1, r2)
    out[0] += sign * (v[k, 0] + c0)
    out[1] += sign * (v[k, 1] + c1)
    out[2] += sign * (v[k, 2] + c2)


@njit(cache=True)
def _k_inv(invm, invI, pos, k, p, d):
    if k < 0 or invm[k] == 0.0:
        return 0.0
    r0, r1, r2 = p[0] - pos[k, 0], p[1] - pos[k, 1], p[2] - pos[k, 2]
    a0, a1, a2 = _cross(r0, r1, r2, d[0], d[1], d[2])
    out = invm[k]
    out += a0 * (invI[k, 0, 0] * a0 + invI[k, 0, 1] * a1 + invI[k, 0, 2] * a2)
    out += a1 * (invI[k, 1, 0] * a0 + invI[k, 1, 1] * a1 + invI[k, 1, 2] * a2)
    out += a2 * (invI[k, 2, 0] * a0 + invI[k, 2, 1] * a1 + invI[k, 2, 2] * a2)
    return out


@njit(cache=True)
def _push(v, w, invm, invI, pos, k, p, j0, j1, j2, sign):
    if k < 0 or invm[k] == 0.0:
        return
    j0, j1, j2 = sign * j0, sign * j1, sign * j2
    v[k, 0] += invm[k] * j0
    v[k, 1] += invm[k] * j1
    v[k, 2] += invm[k] * j2
    r0, r1, r2 = p[0] - pos[k, 0], p[1] - pos[k, 1], p[2] - pos[k, 2]
    a0, a1, a2 = _cross(r0, r1, r2, j0, j1, j2)
    for m in range(3):
        w[k, m] += invI[k, m, 0] * a0 + invI[k, m, 1] * a1 + invI[k, m, 2] * a2


@njit(cache=True)
def _apply(v, w, invm, invI, pos, i, j, p, j0, j1, j2, tot, idx):
    _push(v, w, invm, invI, pos, i, p, j0, j1, j2, 1.0)
    _push(v, w, invm, invI, pos, j, p, j0, j1, j2, -1.0)
    tot[idx, 0] += j0
    tot[idx, 1] += j1
    tot[idx, 2] += j2


@njit(cache=True)
def _rel(v, w, pos, i, j, p):
    out = np.zeros(3)
    _rel_vel(v, w, pos, i, p, out, 1.0)
    _rel_vel(v, w, pos, j, p, out, -1.0)
    return out


@njit(cache=True)
def solve_contacts(v, w, invm, invI, pos, ci, cj, pts, nrm, dist, rest, fric,
                   resting_speed, touch_tol, horizon, iterations):
    """Returns (approach speeds, accumulated impulse per contact on body i)."""
    nc = ci.shape[0]
    approach = np.empty(nc)
    tot = np.zeros((nc, 3))
    for c in range(nc):
        r = _rel(v, w, pos, ci[c], cj[c], pts[c])
        approach[c] = -(r[0] * nrm[c, 0] + r[1] * nrm[c, 1] + r[2] * nrm[c, 2])

    # phase 1: one restitution impulse per approaching touching contact
    for c in range(nc):
        if dist[c] > touch_tol or approach[c] <= resting_speed:
            continue
        i, j, p, n = ci[c], cj[c], pts[c], nrm[c]
        r = _rel(v, w, pos, i, j, p)
        vn = r[0] * n[0] + r[1] * n[1] + r[2] * n[2]
        if vn >= 0.0:
            continue
        k = _k_inv(invm, invI, pos, i, p, n) + _k_inv(invm, invI, pos, j, p, n)
        if k <= 0.0:
            continue
        jn = -(1.0 + rest[c]) * vn / k
        _apply(v, w, invm, invI, pos, i, j, p, jn * n[0], jn * n[1], jn * n[2], tot, c)
        if fric[c] > 0.0:
            r = _rel(v, w, pos, i, j, p)
            vn = r[0] * n[0] + r[1] * n[1] + r[2] * n[2]
            vt = r - vn * n
            speed = math.sqrt(vt[0] ** 2 + vt[1] ** 2 + vt[2] ** 2)
            if speed > 1e-12:
                td = vt / speed
                kt = _k_inv(invm, invI, pos, i, p, td) + _k_inv(invm, invI, pos, j, p, td)
                jt = min(speed / kt, fric[c] * jn)
                _apply(v, w, invm, invI, pos, i, j, p, -jt * td[0], -jt * td[1], -jt * td[2], tot, c)

    # phase 2: accumulated-impulse PGS with zero restitution
    t1 = np.zeros((nc, 3))
    t2 = np.zeros((nc, 3))
    kn = np.zeros(nc)
    k1 = np.zeros(nc)
    k2 = np.zeros(nc)
    allowed = np.zeros(nc)
    lam = np.zeros(nc)
    l1 = np.zeros(nc)
    l2 = np.zeros(nc)
    for c in range(nc):
        i, j, p, n = ci[c], cj[c], pts[c], nrm[c]
        r = _rel(v, w, pos, i, j, p)
        vn = r[0] * n[0] + r[1] * n[1] + r[2] * n[2]
        vt = r - vn * n
        speed = math.sqrt(vt[0] ** 2 + vt[1] ** 2 + vt[2] ** 2)
        if speed > 1e-12:
            a = vt / speed
        else:
            a = np.array([0.0, n[2], -n[1]])  # n x e_x
            if math.sqrt(a[0] ** 2 + a[1] ** 2 + a[2] ** 2) < 1e-6:
                a = np.array([n[1], -n[0], 0.0])  # n x e_z
            a = a / math.sqrt(a[0] ** 2 + a[1] ** 2 + a[2] ** 2)
        b0, b1, b2 = _cross(n[0], n[1], n[2], a[0], a[1], a[2])
        t1[c] = a
        t2[c, 0], t2[c, 1], t2[c, 2] = b0, b1, b2
        kn[c] = _k_inv(invm, invI, pos, i, p, n) + _k_inv(invm, invI, pos, j, p, n)
        k1[c] = _k_inv(invm, invI, pos, i, p, t1[c]) + _k_inv(invm, invI, pos, j, p, t1[c])
        k2[c] = _k_inv(invm, invI, pos, i, p, t2[c]) + _k_inv(invm, invI, pos, j, p, t2[c])
        allowed[c] = dist[c] / horizon if dist[c] > touch_tol else 0.0

    for _ in range(iterations):
        change = 0.0
        for c in range(nc):
            if kn[c] <= 0.0:
                continue
            i, j, p, n = ci[c], cj[c], pts[c], nrm[c]
            r = _rel(v, w, pos, i, j, p)
            vn = r[0] * n[0] + r[1] * n[1] + r[2] * n[2]
            d = 0.0
            if vn < -allowed[c]:
                d = (-allowed[c] - vn) / kn[c]
            elif vn > 0.0 and lam[c] > 0.0:
                d = max(-vn / kn[c], -lam[c])
            if d != 0.0:
                _apply(v, w, invm, invI, pos, i, j, p, d * n[0], d * n[1], d * n[2], tot, c)
                lam[c] += d
                change = max(change, abs(d) * kn[c])
            mu = fric[c]
            if mu > 0.0 and (lam[c] > 0.0 or l1[c] != 0.0 or l2[c] != 0.0):
                r = _rel(v, w, pos, i, j, p)
                n1 = l1[c] - (r[0] * t1[c, 0] + r[1] * t1[c, 1] + r[2] * t1[c, 2]) / k1[c]
                n2 = l2[c] - (r[0] * t2[c, 0] + r[1] * t2[c, 1] + r[2] * t2[c, 2]) / k2[c]
                cap = mu * lam[c]
                mag = math.hypot(n1, n2)
                if mag > cap:
                    scale = cap / mag if mag > 0.0 else 0.0
                    n1 *= scale
                    n2 *= scale
                d1 = n1 - l1[c]
                d2 = n2 - l2[c]
                if d1 != 0.0 or d2 != 0.0:
                    im = d1 * t1[c] + d2 * t2[c]
                    _apply(v, w, invm, invI, pos, i, j, p, im[0], im[1], im[2], tot, c)
                    change = max(change, abs(d1) * k1[c], abs(d2) * k2[c])
                l1[c] = n1
                l2[c] = n2
        if change < 1e-9:
            break
    return approach, tot
