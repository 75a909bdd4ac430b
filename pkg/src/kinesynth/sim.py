"""Deterministic fixed-step rigid-body simulation.

Each frame is split into ``SUBSTEPS`` substeps. Inside a substep:

1. *Support pass.* Velocities are kicked by gravity first; contacts that are
   already touching and would approach after the kick receive impulses
   (projected Gauss-Seidel, Coulomb friction clamped at mu * normal impulse).
   Bodies that took an impulse are supported and move linearly for the rest
   of the substep; all others stay on an exact ballistic arc.
2. *Impacts.* The earliest time of impact among separated pairs is located by
   conservative advancement, the world is advanced to it, and restitution
   impulses are applied at the instantaneous velocities. A body left resting
   against a supporting contact is converted to supported.
3. *Cleanup.* Residual penetration is pushed out (Baumgarte, beta=0.2),
   slow supported bodies are put to rest and states are checked for NaN.

Spheres and oriented boxes collide with their true geometry. Cylinders, cones
and icospheres use their bounding sphere.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ._solver import solve_contacts
from .exceptions import SimulationDiverged, ValidationError
from .geometry import (
    box_box_sat,
    box_edges,
    box_vertices,
    cross,
    norm,
    point_box_closest,
    quat_integrate,
    quat_to_matrix,
    segment_closest,
)
from .scene import SceneConfig, bounding_radius

SUBSTEPS = 8
BAUMGARTE = 0.2
SLOP = 1e-5
SLEEP_SPEED = 1e-3
TOUCH_TOL = 2e-5
CA_TOL = 1e-5
SOLVER_ITERATIONS = 200  # cap; the solver exits once impulses stop changing
MAX_EVENTS_PER_SUBSTEP = 64
GROUND_RESTITUTION = 1.0
GROUND_FRICTION = 1.0
GROUND = -1

_UP = np.array([0.0, 1.0, 0.0])


@dataclass
class BodyState:
    """Snapshot of one body. ``inverse_mass == 0`` marks a static body.

    ``collision_shape`` is ``"sphere"`` (``half_extent`` = radius) or
    ``"box"`` (``half_extent`` = half edge length).
    """

    position: np.ndarray
    orientation: np.ndarray
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray
    inverse_mass: float
    inverse_inertia: np.ndarray
    collision_shape: str = "sphere"
    half_extent: float = 0.5
    restitution: float = 0.5
    friction: float = 0.5

    def copy(self):
        return BodyState(
            position=np.array(self.position, dtype=float),
            orientation=np.array(self.orientation, dtype=float),
            linear_velocity=np.array(self.linear_velocity, dtype=float),
            angular_velocity=np.array(self.angular_velocity, dtype=float),
            inverse_mass=float(self.inverse_mass),
            inverse_inertia=np.array(self.inverse_inertia, dtype=float),
            collision_shape=self.collision_shape,
            half_extent=float(self.half_extent),
            restitution=float(self.restitution),
            friction=float(self.friction),
        )

    @property
    def bounding_radius(self):
        if self.collision_shape == "box":
            return math.sqrt(3.0) * self.half_extent
        return self.half_extent


def make_body(shape_kind, mass, size, position, velocity=(0, 0, 0), restitution=0.5,
              friction=0.5, static=False):
    """Build a :class:`BodyState` for a scene shape (sphere proxy unless box)."""
    if shape_kind == "box":
        half = 0.5 * size
        inertia = mass * size * size / 6.0
        coll = "box"
    else:
        half = bounding_radius(shape_kind, size)
        inertia = 0.4 * mass * half * half
        coll = "sphere"
    inv_i = np.zeros((3, 3)) if static else np.eye(3) / inertia
    return BodyState(
        position=np.array(position, dtype=float),
        orientation=np.array([1.0, 0.0, 0.0, 0.0]),
        linear_velocity=np.array(velocity, dtype=float),
        angular_velocity=np.zeros(3),
        inverse_mass=0.0 if static else 1.0 / mass,
        inverse_inertia=inv_i,
        collision_shape=coll,
        half_extent=half,
        restitution=restitution,
        friction=friction,
    )


@dataclass
class Contact:
    i: int
    j: int
    point: np.ndarray
    normal: np.ndarray  # unit, from j towards i
    distance: float


class _Body:
    __slots__ = ("s", "acc", "rot", "inv_iw", "supported", "radius", "box")

    def __init__(self, state, gravity):
        self.s = state
        self.acc = gravity
        self.supported = False
        self.radius = state.bounding_radius
        self.box = state.collision_shape == "box"
        self.refresh()

    def refresh(self):
        self.rot = quat_to_matrix(self.s.orientation)
        self.inv_iw = self.rot @ self.s.inverse_inertia @ self.rot.T

    @property
    def dynamic(self):
        return self.s.inverse_mass > 0


class ContactMonitor:
    """Hook interface for instrumentation; every method is optional.

    ``on_impulse(i, j, before, after)``: the net impulse one contact between
    bodies ``i`` and ``j`` (``j == -1`` for the ground) delivered during a
    solve. ``before`` maps body index to the pre-solve
    ``(linear_velocity, angular_velocity)``; ``after`` is that state with only
    this contact's impulse applied.

    ``on_contact_phase(time, before, after)``: one complete contact
    resolution at a fixed instant; both are lists of :class:`BodyState`.
    """


class World:
    """Mutable simulation world: dynamic bodies over an infinite ground plane y=0."""

    def __init__(self, bodies, gravity=9.81, ground=True, monitor=None):
        self.g = np.array([0.0, -float(gravity), 0.0])
        self.bodies = [_Body(b.copy(), self.g) for b in bodies]
        self.ground = ground
        self.monitor = monitor
        self.time = 0.0
        self.impulses = {}  # (i, j) -> [impulse magnitude, max approach speed]
        self.resting_speed = 0.0

    # -- public -----------------------------------------------------------
    def states(self):
        return [b.s.copy() for b in self.bodies]

    def step(self, dt):
        if dt <= 0:
            raise ValueError("dt must be > 0")
        self.resting_speed = 2.0 * float(norm(self.g)) * dt
        for b in self.bodies:
            b.acc = self.g if b.dynamic else np.zeros(3)
            b.supported = False
        self._support_pass(dt)
        t = 0.0
        for _ in range(MAX_EVENTS_PER_SUBSTEP):
            remaining = dt - t
            if remaining <= 0:
                break
            tau = self._earliest_impact(remaining)
            if tau is None:
                self._advance(remaining)
                t = dt
                break
            self._advance(tau)
            t += tau
            self._resolve_impacts(dt - t)
        else:
            self._advance(dt - t)
        self._positional_correction()
        self._sleep()
        self.time += dt

    # -- geometry ---------------------------------------------------------
    def _pairs(self):
        n = len(self.bodies)
        for i in range(n):
            bi = self.bodies[i]
            if self.ground and bi.dynamic:
                yield i, GROUND
            for j in range(i + 1, n):
                if bi.dynamic or self.bodies[j].dynamic:
                    yield i, j

    def _pose(self, k, tau):
        b = self.bodies[k]
        s = b.s
        if not b.dynamic or tau == 0:
            return s.position, b.rot
        x = s.position + s.linear_velocity * tau + 0.5 * b.acc * tau * tau
        if b.box:
            rot = quat_to_matrix(quat_integrate(s.orientation, s.angular_velocity, tau))
        else:
            rot = b.rot
        return x, rot

    def _distance(self, i, j, pi, pj):
        bi = self.bodies[i]
        xi, ri = pi
        if j == GROUND:
            if bi.box:
                return float(np.min(box_vertices(xi, ri, bi.s.half_extent)[:, 1]))
            return float(xi[1] - bi.s.half_extent)
        bj = self.bodies[j]
        xj, rj = pj
        if not bi.box and not bj.box:
            return float(norm(xi - xj) - bi.s.half_extent - bj.s.half_extent)
        if bi.box and bj.box:
            hi = np.full(3, bi.s.half_extent)
            hj = np.full(3, bj.s.half_extent)
            return float(box_box_sat(xi, ri, hi, xj, rj, hj)[0])
        if bi.box:
            bi, bj, xi, ri, xj, rj = bj, bi, xj, rj, xi, ri
        # bi sphere, bj box
        q, inside, local = point_box_closest(xi, xj, rj, np.full(3, bj.s.half_extent))
        if inside:
            depth = float(np.min(bj.s.half_extent - np.abs(local)))
            return -depth - bi.s.half_extent
        return float(norm(xi - q) - bi.s.half_extent)

    def pair_distance(self, i, j):
        return self._distance(i, j, self._pose(i, 0), self._pose(j, 0) if j != GROUND else None)

    def _contacts(self, i, j, tol=TOUCH_TOL, margin=0.0):
        """Contact points for pair (i, j) if they are within ``tol``.

        Once a pair touches, every feature closer than ``margin`` is returned
        as well (speculative points for rotating boxes).
        """
        margin = max(margin, tol)
        bi = self.bodies[i]
        xi, ri = bi.s.position, bi.rot
        if j == GROUND:
            if bi.box:
                verts = box_vertices(xi, ri, bi.s.half_extent)
                lo = verts[:, 1].min()
                if lo >= tol:
                    return []
                return [Contact(i, j, v.copy(), _UP, float(v[1]))
                        for v in verts if v[1] < margin]
            d = xi[1] - bi.s.half_extent
            if d >= tol:
                return []
            p = xi - bi.s.half_extent * _UP
            return [Contact(i, j, p, _UP, float(d))]
        bj = self.bodies[j]
        xj, rj = bj.s.position, bj.rot
        if not bi.box and not bj.box:
            delta = xi - xj
            dist = float(norm(delta))
            d = dist - bi.s.half_extent - bj.s.half_extent
            if d >= tol:
                return []
            n = delta / dist if dist > 1e-12 else _UP
            return [Contact(i, j, xj + bj.s.half_extent * n, n, d)]
        if bi.box and bj.box:
            return self._box_box_contacts(i, j, tol, margin)
        flip = bi.box
        si, sj = (j, i) if flip else (i, j)
        sph, box = self.bodies[si], self.bodies[sj]
        half = np.full(3, box.s.half_extent)
        q, inside, local = point_box_closest(sph.s.position, box.s.position, box.rot, half)
        if inside:
            # push out through the nearest face
            k = int(np.argmax(np.abs(local) - half))
            axis = box.rot[:, k] * (1.0 if local[k] >= 0 else -1.0)
            depth = float(half[k] - abs(local[k]))
            d = -depth - sph.s.half_extent
            n = axis
            p = sph.s.position - sph.s.half_extent * n
        else:
            delta = sph.s.position - q
            dist = float(norm(delta))
            d = dist - sph.s.half_extent
            n = delta / dist if dist > 1e-12 else _UP
            p = q
        if d >= tol:
            return []
        if flip:
            n = -n
        return [Contact(i, j, p, n, d)]

    def _box_box_contacts(self, i, j, tol, margin):
        bi, bj = self.bodies[i], self.bodies[j]
        hi = np.full(3, bi.s.half_extent)
        hj = np.full(3, bj.s.half_extent)
        xi, xj = bi.s.position, bj.s.position
        sep, axis = box_box_sat(xi, bi.rot, hi, xj, bj.rot, hj)
        if sep >= tol:
            return []
        mtol = max(margin, 4 * TOUCH_TOL)
        points = []
        for v in box_vertices(xi, bi.rot, bi.s.half_extent):
            q, inside, _ = point_box_closest(v, xj, bj.rot, hj)
            if inside or norm(v - q) < mtol:
                points.append(v)
        for v in box_vertices(xj, bj.rot, bj.s.half_extent):
            q, inside, _ = point_box_closest(v, xi, bi.rot, hi)
            if inside or norm(v - q) < mtol:
                points.append(v)
        if not points:
            vi = box_vertices(xi, bi.rot, bi.s.half_extent)
            vj = box_vertices(xj, bj.rot, bj.s.half_extent)
            best = None
            for a, b in box_edges():
                for c, d in box_edges():
                    p, q = segment_closest(vi[a], vi[b], vj[c], vj[d])
                    dd = float(norm(p - q))
                    if best is None or dd < best[0]:
                        best = (dd, 0.5 * (p + q))
            points = [best[1]]
        return [Contact(i, j, np.array(p), axis, float(sep)) for p in points]

    # -- dynamics ---------------------------------------------------------
    def _velocity_at(self, k, p):
        if k == GROUND:
            return np.zeros(3)
        s = self.bodies[k].s
        return s.linear_velocity + cross(s.angular_velocity, p - s.position)

    def _materials(self, i, j):
        si = self.bodies[i].s
        if j == GROUND:
            ej, mj = GROUND_RESTITUTION, GROUND_FRICTION
        else:
            ej, mj = self.bodies[j].s.restitution, self.bodies[j].s.friction
        return min(si.restitution, ej), math.sqrt(si.friction * mj)

    def _solve(self, contacts, horizon):
        """Resolve a set of simultaneous contacts; returns bodies that took an impulse.

        Touching contacts approaching faster than the resting speed first get
        one restitution impulse each (with Coulomb friction). Then all contacts
        go through accumulated-impulse Gauss-Seidel with zero restitution.
        Contacts with a positive gap are speculative: they only remove the
        approach that would close the gap within ``horizon``. Every individual
        impulse moves the contact velocity toward the kinetic-energy minimum
        along its direction, so no step adds kinetic energy except through a
        friction clamp shrinking with its normal impulse.
        """
        touched = set()
        if not contacts:
            return touched
        mon = self.monitor
        phase_before = self.states() if mon is not None and hasattr(mon, "on_contact_phase") else None
        bodies = self.bodies
        n = len(bodies)
        v = np.array([b.s.linear_velocity for b in bodies], dtype=float).reshape(n, 3)
        w = np.array([b.s.angular_velocity for b in bodies], dtype=float).reshape(n, 3)
        invm = np.array([b.s.inverse_mass for b in bodies], dtype=float)
        inv_iw = np.array([b.inv_iw for b in bodies], dtype=float).reshape(n, 3, 3)
        pos = np.array([b.s.position for b in bodies], dtype=float).reshape(n, 3)
        ci = np.array([c.i for c in contacts], dtype=np.int64)
        cj = np.array([c.j for c in contacts], dtype=np.int64)
        pts = np.array([c.point for c in contacts], dtype=float)
        nrm = np.array([c.normal for c in contacts], dtype=float)
        dist = np.array([c.distance for c in contacts], dtype=float)
        mats = [self._materials(c.i, c.j) for c in contacts]
        rest = np.array([m[0] for m in mats])
        fric = np.array([m[1] for m in mats])
        v0, w0 = v.copy(), w.copy()
        approach, totals = solve_contacts(
            v, w, invm, inv_iw, pos, ci, cj, pts, nrm, dist, rest, fric,
            self.resting_speed, TOUCH_TOL, horizon, SOLVER_ITERATIONS,
        )
        for k, b in enumerate(bodies):
            if b.dynamic:
                b.s.linear_velocity = v[k].copy()
                b.s.angular_velocity = w[k].copy()

        on_impulse = getattr(mon, "on_impulse", None) if mon is not None else None
        for c, v_in, tot in zip(contacts, approach, totals):
            mag = norm(tot)
            if mag <= 0:
                continue
            rec = self.impulses.setdefault((c.i, c.j), [0.0, 0.0])
            rec[0] += mag
            rec[1] = max(rec[1], float(v_in))
            touched.add(c.i)
            if c.j != GROUND:
                touched.add(c.j)
            if on_impulse is not None:
                # this contact's share of the solve, applied to the pre-solve state
                before, after = {}, {}
                for k, sign in ((c.i, 1.0), (c.j, -1.0)):
                    if k == GROUND:
                        continue
                    imp = sign * tot
                    before[k] = (v0[k].copy(), w0[k].copy())
                    after[k] = (v0[k] + invm[k] * imp,
                                w0[k] + inv_iw[k] @ cross(c.point - pos[k], imp))
                on_impulse(c.i, c.j, before, after)
        if phase_before is not None:
            mon.on_contact_phase(self.time, phase_before, self.states())
        return touched

    def _touching_contacts(self, horizon, bodies=None):
        out = []
        for i, j in self._candidates(0.0):
            if bodies is not None and i not in bodies and j not in bodies:
                continue
            margin = self._rate_bound(i, j, horizon) * horizon if self.bodies[i].box or (
                j != GROUND and self.bodies[j].box) else 0.0
            out.extend(self._contacts(i, j, margin=margin))
        return out

    def _candidates(self, horizon):
        """Pairs whose bounding spheres may come within TOUCH_TOL inside ``horizon``."""
        bodies = self.bodies
        n = len(bodies)
        x = np.array([b.s.position for b in bodies]).reshape(n, 3)
        v = np.array([b.s.linear_velocity for b in bodies]).reshape(n, 3)
        a = np.array([b.acc for b in bodies]).reshape(n, 3)
        r = np.array([b.radius for b in bodies])
        dyn = np.array([b.dynamic for b in bodies], dtype=bool)
        h = horizon
        out = []
        if self.ground:
            reach = np.abs(v[:, 1]) * h + 0.5 * np.abs(a[:, 1]) * h * h
            hit = dyn & (x[:, 1] - r - reach < TOUCH_TOL)
        else:
            hit = np.zeros(n, dtype=bool)
        if n > 1:
            gap = np.linalg.norm(x[:, None] - x[None], axis=2) - r[:, None] - r[None]
            reach = (np.linalg.norm(v[:, None] - v[None], axis=2) * h
                     + 0.5 * np.linalg.norm(a[:, None] - a[None], axis=2) * h * h)
            near = (gap - reach < TOUCH_TOL) & (dyn[:, None] | dyn[None])
        for i in range(n):
            if hit[i]:
                out.append((i, GROUND))
            for j in range(i + 1, n):
                if near[i, j]:
                    out.append((i, j))
        return out

    def _support_pass(self, dt):
        contacts = self._touching_contacts(dt)
        if not contacts:
            return
        involved = {c.i for c in contacts} | {c.j for c in contacts if c.j != GROUND}
        saved = {k: self.bodies[k].s.linear_velocity.copy() for k in involved}
        for k in involved:
            b = self.bodies[k]
            if b.dynamic:
                b.s.linear_velocity = b.s.linear_velocity + self.g * dt
        touched = self._solve(contacts, dt)
        for k in involved:
            b = self.bodies[k]
            if not b.dynamic:
                continue
            if k in touched:
                b.acc = np.zeros(3)
                b.supported = True
            else:
                b.s.linear_velocity = saved[k]

    def _earliest_impact(self, horizon):
        best = None
        for i, j in self._candidates(horizon):
            tau = self._advance_pair(i, j, horizon)
            if tau is not None and (best is None or tau < best):
                best = tau
        return best

    def _rate_bound(self, i, j, horizon):
        bi = self.bodies[i]
        rate = 0.0
        vi, ai = bi.s.linear_velocity, bi.acc
        if j == GROUND:
            dv, da = vi, ai
        else:
            bj = self.bodies[j]
            dv = vi - bj.s.linear_velocity
            da = ai - bj.acc
            if bj.box:
                rate += float(norm(bj.s.angular_velocity)) * bj.radius
        if bi.box:
            rate += float(norm(bi.s.angular_velocity)) * bi.radius
        if j == GROUND and not bi.box:
            return rate + max(0.0, -dv[1]) + max(0.0, -da[1]) * horizon
        return rate + float(norm(dv)) + float(norm(da)) * horizon

    def _advance_pair(self, i, j, horizon):
        """Conservative advancement: earliest tau in [0, horizon] with distance <= CA_TOL."""
        d = self._distance(i, j, self._pose(i, 0.0), self._pose(j, 0.0) if j != GROUND else None)
        if d < TOUCH_TOL:
            return None
        bound = self._rate_bound(i, j, horizon)
        if bound <= 0:
            return None
        tau = 0.0
        for _ in range(100):
            if d <= CA_TOL:
                return tau
            tau += d / bound
            if tau > horizon:
                return None
            pj = self._pose(j, tau) if j != GROUND else None
            d = self._distance(i, j, self._pose(i, tau), pj)
        return tau

    def _advance(self, tau):
        if tau <= 0:
            return
        for b in self.bodies:
            if not b.dynamic:
                continue
            s = b.s
            s.position = s.position + s.linear_velocity * tau + 0.5 * b.acc * tau * tau
            s.linear_velocity = s.linear_velocity + b.acc * tau
            if s.angular_velocity.any():
                s.orientation = quat_integrate(s.orientation, s.angular_velocity, tau)
                b.refresh()

    def _resolve_impacts(self, remaining):
        horizon = max(remaining, 1e-9)
        contacts = self._touching_contacts(horizon)
        if not contacts:
            return
        self._solve(contacts, horizon)
        # free bodies left resting on a supporting contact become supported
        settle = []
        for c in contacts:
            if c.distance > TOUCH_TOL:
                continue
            for k, sign in ((c.i, 1.0), (c.j, -1.0)):
                if k == GROUND:
                    continue
                b = self.bodies[k]
                if not b.dynamic or b.supported:
                    continue
                n = sign * c.normal
                if float(self.g @ n) >= 0:
                    continue
                rel = self._velocity_at(c.i, c.point) - self._velocity_at(c.j, c.point)
                if float(rel @ c.normal) < self.resting_speed:
                    settle.append(k)
        if not settle:
            return
        for k in set(settle):
            b = self.bodies[k]
            b.s.linear_velocity = b.s.linear_velocity + b.acc * remaining
            b.acc = np.zeros(3)
            b.supported = True
        self._solve(self._touching_contacts(horizon, set(settle)), horizon)

    def _positional_correction(self, passes=8):
        for _ in range(passes):
            moved = False
            for i, j in self._candidates(0.0):
                contacts = self._contacts(i, j, tol=0.0)
                if not contacts:
                    continue
                c = min(contacts, key=lambda c: c.distance)
                depth = -c.distance
                if depth <= SLOP:
                    continue
                wi = self.bodies[i].s.inverse_mass
                wj = 0.0 if j == GROUND else self.bodies[j].s.inverse_mass
                if wi + wj <= 0:
                    continue
                corr = BAUMGARTE * (depth - SLOP) / (wi + wj) * c.normal
                self.bodies[i].s.position = self.bodies[i].s.position + wi * corr
                if j != GROUND:
                    self.bodies[j].s.position = self.bodies[j].s.position - wj * corr
                moved = True
            if not moved:
                break

    def _sleep(self):
        for b in self.bodies:
            if not (b.dynamic and b.supported):
                continue
            s = b.s
            if (norm(s.linear_velocity) < SLEEP_SPEED
                    and norm(s.angular_velocity) * b.radius < SLEEP_SPEED):
                s.linear_velocity = np.zeros(3)
                s.angular_velocity = np.zeros(3)


def step(states, dt_sub, gravity=9.81, ground=True, monitor=None):
    """Advance a list of :class:`BodyState` by one substep; inputs are not modified."""
    world = World(states, gravity=gravity, ground=ground, monitor=monitor)
    world.step(dt_sub)
    return world.states()


@dataclass
class ContactEvent:
    frame: int
    i: int
    j: int
    impulse: float
    approach_speed: float

    def to_dict(self):
        return {"frame": self.frame, "i": self.i, "j": self.j,
                "impulse": self.impulse, "approach_speed": self.approach_speed}


@dataclass
class Trajectory:
    """Per-frame body states for every object of one scene.

    Arrays are indexed ``[frame, object]``. ``contact_events[k].frame`` is the
    interval ``[frame, frame + 1)`` in which the impulse acted; ``j == -1`` is
    the ground.
    """

    positions: np.ndarray
    orientations: np.ndarray
    linear_velocities: np.ndarray
    angular_velocities: np.ndarray
    inverse_masses: np.ndarray
    inverse_inertias: np.ndarray
    fps: float
    substeps: int
    contact_events: list = field(default_factory=list)

    @property
    def frame_count(self):
        return self.positions.shape[0]

    @property
    def object_count(self):
        return self.positions.shape[1]

    @property
    def dt(self):
        return 1.0 / (self.fps * self.substeps)

    def state(self, frame, k):
        return BodyState(
            position=self.positions[frame, k].copy(),
            orientation=self.orientations[frame, k].copy(),
            linear_velocity=self.linear_velocities[frame, k].copy(),
            angular_velocity=self.angular_velocities[frame, k].copy(),
            inverse_mass=float(self.inverse_masses[k]),
            inverse_inertia=self.inverse_inertias[k].copy(),
        )

    def contact_frames(self, k, min_speed=0.0):
        return sorted({e.frame for e in self.contact_events
                       if (e.i == k or e.j == k) and e.approach_speed >= min_speed})

    def with_velocity_jump(self, k, frame, dv):
        """Copy with object ``k`` kicked by ``dv`` (m/s) at ``frame``, ignoring contacts."""
        dv = np.asarray(dv, dtype=float)
        out = Trajectory(
            positions=self.positions.copy(),
            orientations=self.orientations.copy(),
            linear_velocities=self.linear_velocities.copy(),
            angular_velocities=self.angular_velocities.copy(),
            inverse_masses=self.inverse_masses.copy(),
            inverse_inertias=self.inverse_inertias.copy(),
            fps=self.fps,
            substeps=self.substeps,
            contact_events=list(self.contact_events),
        )
        t = (np.arange(self.frame_count) - frame) / self.fps
        after = t > 0
        out.positions[after, k] += t[after, None] * dv
        out.linear_velocities[frame:, k] += dv
        return out

    # -- serialization ----------------------------------------------------
    MAGIC = b"KSTRAJ01"

    def to_bytes(self):
        """Flat little-endian record.

        Layout: magic (8 bytes), uint32 frame count F, uint32 object count N,
        uint32 substeps, float64 fps, then float64 blocks in order:
        positions F*N*3, orientations F*N*4, linear velocities F*N*3,
        angular velocities F*N*3, inverse masses N, inverse inertias N*9.
        """
        f, n = self.frame_count, self.object_count
        head = self.MAGIC + struct.pack("<IIId", f, n, self.substeps, self.fps)
        blocks = [self.positions, self.orientations, self.linear_velocities,
                  self.angular_velocities, self.inverse_masses, self.inverse_inertias]
        body = b"".join(np.ascontiguousarray(b, dtype="<f8").tobytes() for b in blocks)
        return head + body

    @classmethod
    def from_bytes(cls, data, events=(), path="<bytes>"):
        hsize = len(cls.MAGIC) + struct.calcsize("<IIId")
        if len(data) < hsize or data[:8] != cls.MAGIC:
            raise ValidationError(path, "trajectory", "bad magic or truncated header")
        f, n, sub, fps = struct.unpack("<IIId", data[8:hsize])
        shapes = [(f, n, 3), (f, n, 4), (f, n, 3), (f, n, 3), (n,), (n, 3, 3)]
        expected = hsize + 8 * sum(int(np.prod(s)) for s in shapes)
        if len(data) != expected:
            raise ValidationError(path, "trajectory", f"size {len(data)} != expected {expected}")
        arrays = []
        off = hsize
        for s in shapes:
            count = int(np.prod(s))
            arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(s).astype(float))
            off += 8 * count
        return cls(*arrays, fps=fps, substeps=sub,
                   contact_events=[ContactEvent(**e) for e in events])

    def events_json(self):
        return json.dumps([e.to_dict() for e in self.contact_events], separators=(",", ":"))

    def save(self, path, sidecar=None):
        path = Path(path)
        path.write_bytes(self.to_bytes())
        sidecar = Path(sidecar) if sidecar else path.with_suffix(".events.json")
        sidecar.write_text(self.events_json())
        return path, sidecar

    @classmethod
    def load(cls, path, sidecar=None):
        path = Path(path)
        sidecar = Path(sidecar) if sidecar else path.with_suffix(".events.json")
        try:
            events = json.loads(sidecar.read_text())
        except (OSError, ValueError) as exc:
            raise ValidationError(sidecar, "trajectory", f"unreadable contact events: {exc}") from None
        return cls.from_bytes(path.read_bytes(), events, path=path)


def initial_bodies(config: SceneConfig):
    return [
        make_body(o.shape_kind, o.mass, o.characteristic_size, o.initial_position,
                  velocity=o.impulse_velocity(config.fps), restitution=o.restitution,
                  friction=o.friction)
        for o in config.objects
    ]


def simulate(config: SceneConfig, substeps: int = SUBSTEPS, monitor=None) -> Trajectory:
    """Integrate a scene; frame ``i`` holds the state at ``t = i / fps``.

    Raises:
        SimulationDiverged: a body state became non-finite.
    """
    world = World(initial_bodies(config), gravity=config.gravity, monitor=monitor)
    f, n = config.frame_count, len(config.objects)
    pos = np.zeros((f, n, 3))
    ori = np.zeros((f, n, 4))
    vel = np.zeros((f, n, 3))
    ang = np.zeros((f, n, 3))
    events = []
    dt = 1.0 / (config.fps * substeps)

    def record(frame):
        for k, b in enumerate(world.bodies):
            s = b.s
            if not (np.all(np.isfinite(s.position)) and np.all(np.isfinite(s.linear_velocity))
                    and np.all(np.isfinite(s.angular_velocity)) and np.all(np.isfinite(s.orientation))):
                raise SimulationDiverged(frame)
            pos[frame, k] = s.position
            ori[frame, k] = s.orientation
            vel[frame, k] = s.linear_velocity
            ang[frame, k] = s.angular_velocity

    record(0)
    for frame in range(1, f):
        world.impulses = {}
        for _ in range(substeps):
            world.step(dt)
        for (i, j), (imp, speed) in sorted(world.impulses.items()):
            events.append(ContactEvent(frame - 1, i, j, imp, speed))
        record(frame)
    inv_m = np.array([b.s.inverse_mass for b in world.bodies])
    inv_i = np.array([b.s.inverse_inertia for b in world.bodies])
    return Trajectory(pos, ori, vel, ang, inv_m, inv_i, fps=config.fps,
                      substeps=substeps, contact_events=events)
