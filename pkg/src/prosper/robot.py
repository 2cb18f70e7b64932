"""Kinematics of the needle-insertion robot.

The robot frame has x lateral (patient left), y along the nominal insertion
axis (toward the patient) and z vertical.  The stage joints are named for the
mechanism, not the world frame:

  x    lateral carriage, moves the wrist along world x
  y    vertical carriage, moves the wrist along world z
  z    approach carriage, moves the wrist along world y (stand-off)
  pan  wrist rotation about world z
  tilt wrist rotation about world x

The perineum plane is y = 0; a needle pose reports the point where the needle
axis crosses this plane.  The approach carriage slides the wrist along world y
without changing that crossing when pan = tilt = 0; inverse kinematics pins it
to z = 0, which is what makes the solution unique.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IndexOutOfGrid, JointLimitViolation, Unreachable
from .geom import vec3

GRID_PITCH_MM = 5.0
GRID_HALF_INDEX = 6  # 13 x 13 template


@dataclass(frozen=True)
class JointLimits:
    x: tuple[float, float] = (-60.0, 60.0)
    y: tuple[float, float] = (-60.0, 60.0)
    z: tuple[float, float] = (-20.0, 20.0)
    pan: tuple[float, float] = (-np.deg2rad(30.0), np.deg2rad(30.0))
    tilt: tuple[float, float] = (-np.deg2rad(30.0), np.deg2rad(30.0))
    depth: tuple[float, float] = (0.0, 160.0)

    def __post_init__(self):
        for name in ("x", "y", "z", "pan", "tilt", "depth"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"joint {name}: min {lo} must be < max {hi}")

    def violations(self, q: "JointConfig") -> list[str]:
        bad = []
        for name in ("x", "y", "z", "pan", "tilt", "depth"):
            lo, hi = getattr(self, name)
            v = getattr(q, name)
            if not (lo <= v <= hi):
                bad.append(name)
        if q.spin_rate < 0:
            bad.append("spin_rate")
        return bad

    def check(self, q: "JointConfig") -> None:
        bad = self.violations(q)
        if bad:
            raise JointLimitViolation(f"joints out of range: {', '.join(bad)}")


@dataclass(frozen=True)
class JointConfig:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    pan: float = 0.0
    tilt: float = 0.0
    depth: float = 0.0
    spin_rate: float = 0.0


@dataclass(frozen=True)
class NeedlePose:
    """Task-space needle state: entry on the perineum plane, unit direction,
    insertion depth beyond the plane, and axial spin rate."""

    entry: np.ndarray
    direction: np.ndarray
    depth: float = 0.0
    spin_rate: float = 0.0

    def __post_init__(self):
        e = np.asarray(self.entry, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise ValueError("needle direction must be nonzero")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.spin_rate < 0:
            raise ValueError("spin_rate must be >= 0")
        object.__setattr__(self, "entry", e)
        object.__setattr__(self, "direction", d / n)

    @property
    def tip(self) -> np.ndarray:
        return self.entry + self.depth * self.direction


@dataclass(frozen=True)
class RobotDescription:
    """Serializable robot parameters: joint limits and template layout."""

    limits: JointLimits = field(default_factory=JointLimits)
    grid_pitch: float = GRID_PITCH_MM
    grid_half_index: int = GRID_HALF_INDEX


DEFAULT_LIMITS = JointLimits()


def _direction(pan: float, tilt: float) -> np.ndarray:
    ct = np.cos(tilt)
    return np.array([-np.sin(pan) * ct, np.cos(pan) * ct, np.sin(tilt)])


def forward_kinematics(q: JointConfig, limits: JointLimits = DEFAULT_LIMITS) -> NeedlePose:
    """Map a joint configuration to its needle pose.

    Raises JointLimitViolation when q is outside the limits.
    """
    limits.check(q)
    pivot = np.array([q.x, q.z, q.y])  # stage axes -> world frame
    d = _direction(q.pan, q.tilt)
    if d[1] <= 1e-9:
        raise JointLimitViolation("needle direction has no forward component")
    s = -pivot[1] / d[1]
    entry = pivot + s * d
    return NeedlePose(entry=entry, direction=d, depth=q.depth, spin_rate=q.spin_rate)


def inverse_kinematics(pose: NeedlePose, limits: JointLimits = DEFAULT_LIMITS) -> JointConfig:
    """Closed-form joint solution for a needle pose.

    The approach carriage is pinned to z = 0, which makes the solution unique.
    Raises Unreachable naming the first saturating joint.
    """
    d = pose.direction
    if d[1] <= 1e-9:
        raise Unreachable("tilt", "direction has no forward component")
    if abs(pose.entry[1]) > 1e-6:
        raise ValueError("pose entry must lie on the perineum plane y = 0")

    tilt = float(np.arcsin(np.clip(d[2], -1.0, 1.0)))
    pan = float(np.arctan2(-d[0], d[1]))
    q = JointConfig(x=float(pose.entry[0]), y=float(pose.entry[2]), z=0.0,
                    pan=pan, tilt=tilt, depth=pose.depth, spin_rate=pose.spin_rate)
    bad = limits.violations(q)
    if bad:
        raise Unreachable(bad[0])
    return q


def grid_target(col: int, row: int, grid_pitch: float = GRID_PITCH_MM) -> NeedlePose:
    """Horizontal trajectory through a classical template hole.

    Hole (col, row) sits at (col*pitch, 0, row*pitch); direction is +y.
    """
    if abs(col) > GRID_HALF_INDEX or abs(row) > GRID_HALF_INDEX:
        raise IndexOutOfGrid(f"hole ({col},{row}) outside +/-{GRID_HALF_INDEX}")
    return NeedlePose(entry=vec3(col * grid_pitch, 0.0, row * grid_pitch),
                      direction=vec3(0.0, 1.0, 0.0))


def workspace_contains(pose: NeedlePose, limits: JointLimits = DEFAULT_LIMITS) -> bool:
    try:
        inverse_kinematics(pose, limits)
    except (Unreachable, ValueError):
        return False
    return True


def with_depth(pose: NeedlePose, depth: float, spin_rate: float | None = None) -> NeedlePose:
    return replace(pose, depth=depth,
                   spin_rate=pose.spin_rate if spin_rate is None else spin_rate)
