"""Runtime audits of the simulator's conservation and penetration bounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import quat_to_matrix
from .scene import SceneConfig
from .sim import GROUND, ContactMonitor, Trajectory, World, initial_bodies, simulate

MOMENTUM_TOL = 1e-6  # kg m/s per contact
ENERGY_TOL = 1e-6  # J per contact resolution
PENETRATION_FRACTION = 1e-3  # of the smaller characteristic size


def mechanical_energy(states, masses, gravity):
    """Kinetic (linear + rotational) plus gravitational potential energy."""
    total = 0.0
    for s, m in zip(states, masses):
        total += 0.5 * m * float(s.linear_velocity @ s.linear_velocity) + m * gravity * float(s.position[1])
        if np.any(s.inverse_inertia):
            r = quat_to_matrix(s.orientation)
            inertia = np.linalg.inv(r @ s.inverse_inertia @ r.T)
            total += 0.5 * float(s.angular_velocity @ inertia @ s.angular_velocity)
    return total


class PhysicsAudit(ContactMonitor):
    """Records the worst momentum error per body-body contact and energy gain per resolution."""

    def __init__(self, masses, gravity):
        self.masses = list(masses)
        self.gravity = gravity
        self.max_momentum_error = 0.0
        self.max_energy_gain = 0.0
        self.momentum_violations = 0
        self.energy_violations = 0
        self.contacts = 0

    def on_impulse(self, i, j, before, after):
        if j == GROUND:
            return
        self.contacts += 1
        mi, mj = self.masses[i], self.masses[j]
        p0 = mi * before[i][0] + mj * before[j][0]
        p1 = mi * after[i][0] + mj * after[j][0]
        err = float(np.abs(p1 - p0).max())
        self.max_momentum_error = max(self.max_momentum_error, err)
        self.momentum_violations += err > MOMENTUM_TOL

    def on_contact_phase(self, time, before, after):
        gain = mechanical_energy(after, self.masses, self.gravity) - mechanical_energy(before, self.masses, self.gravity)
        self.max_energy_gain = max(self.max_energy_gain, gain)
        self.energy_violations += gain > ENERGY_TOL


def max_penetration_ratio(config: SceneConfig, traj: Trajectory):
    """Worst per-frame penetration depth over ``PENETRATION_FRACTION * min size`` (<= 1 passes)."""
    shapes = initial_bodies(config)
    sizes = [o.characteristic_size for o in config.objects]
    worst = 0.0
    for f in range(traj.frame_count):
        states = []
        for k, proto in enumerate(shapes):
            s = proto.copy()
            s.position = traj.positions[f, k].copy()
            s.orientation = traj.orientations[f, k].copy()
            states.append(s)
        world = World(states, gravity=config.gravity)
        for i, j in world._pairs():
            limit = PENETRATION_FRACTION * (sizes[i] if j == GROUND else min(sizes[i], sizes[j]))
            worst = max(worst, -world.pair_distance(i, j) / limit)
    return worst


@dataclass
class SceneAudit:
    seed: int
    objects: int
    max_momentum_error: float
    max_energy_gain: float
    max_penetration_ratio: float
    violations: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not any(self.violations.values())


def audit_scene(config: SceneConfig):
    audit = PhysicsAudit([o.mass for o in config.objects], config.gravity)
    traj = simulate(config, monitor=audit)
    pen = max_penetration_ratio(config, traj)
    return SceneAudit(
        seed=config.seed,
        objects=len(config.objects),
        max_momentum_error=audit.max_momentum_error,
        max_energy_gain=audit.max_energy_gain,
        max_penetration_ratio=pen,
        violations={"momentum": audit.momentum_violations, "energy": audit.energy_violations,
                    "penetration": int(pen > 1.0)},
    )
