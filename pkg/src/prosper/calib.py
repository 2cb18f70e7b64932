"""US-probe to robot calibration from needle-tip detections.

The solver is the closed-form least-squares absolute orientation fit:
demean both point sets, take the SVD of the cross-covariance, and force a
proper rotation (det = +1) before recovering the translation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, TooFewPoints
from .geom import RigidTransform
from .robot import DEFAULT_LIMITS, JointConfig, JointLimits, forward_kinematics

DEFAULT_NOISE_SIGMA_MM = 0.2


@dataclass(frozen=True)
class CalibrationObservation:
    config: JointConfig
    tip_us: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tip_us", np.asarray(self.tip_us, dtype=float))


@dataclass(frozen=True)
class CalibrationResult:
    us_from_robot: RigidTransform
    rms_residual: float
    per_point_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _robot_tips(observations: list[CalibrationObservation],
                limits: JointLimits) -> np.ndarray:
    return np.array([forward_kinematics(o.config, limits).tip for o in observations])


def solve_calibration(observations: list[CalibrationObservation],
                      limits: JointLimits = DEFAULT_LIMITS) -> CalibrationResult:
    """Least-squares rigid transform taking robot-frame tips to US detections."""
    if len(observations) < 3:
        raise TooFewPoints(f"{len(observations)} observations; need >= 3")
    tips_robot = _robot_tips(observations, limits)
    tips_us = np.array([o.tip_us for o in observations])

    c_r = tips_robot.mean(axis=0)
    c_u = tips_us.mean(axis=0)
    a = tips_robot - c_r
    b = tips_us - c_u

    # collinear tips leave the rotation about the line unconstrained
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[1] < 1e-6 * max(sv[0], 1.0):
        raise DegenerateGeometry("robot-frame tips are collinear")

    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = c_u - rot @ c_r

    transform = RigidTransform.from_matrix(rot, t)
    residuals = np.linalg.norm(transform.apply(tips_robot) - tips_us, axis=1)
    rms = float(np.sqrt(np.mean(residuals ** 2)))
    return CalibrationResult(transform, rms, residuals)


def predict_tip_us(q: JointConfig, cal: CalibrationResult,
                   limits: JointLimits = DEFAULT_LIMITS) -> np.ndarray:
    """Planned needle-tip position in the US frame for a joint configuration."""
    return cal.us_from_robot.apply(forward_kinematics(q, limits).tip)


def simulate_water_phantom(true_transform: RigidTransform,
                           configs: list[JointConfig],
                           noise_sigma: float = DEFAULT_NOISE_SIGMA_MM,
                           rng_seed: int = 0,
                           limits: JointLimits = DEFAULT_LIMITS) -> list[CalibrationObservation]:
    """Synthesize tip detections: true transform applied to FK tips plus
    isotropic Gaussian detection noise, deterministic for a given seed."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(rng_seed)
    out = []
    for q in configs:
        tip = true_transform.apply(forward_kinematics(q, limits).tip)
        if noise_sigma > 0:
            tip = tip + rng.normal(0.0, noise_sigma, size=3)
        out.append(CalibrationObservation(q, tip))
    return out


def calibration_configs(n: int = 8) -> list[JointConfig]:
    """Deterministic insertion set: corner poses spanning the workspace with
    alternating depths, then the center, then tilted repeats."""
    corners = [
        JointConfig(x=-40.0, y=-40.0, depth=60.0),
        JointConfig(x=40.0, y=-40.0, depth=140.0),
        JointConfig(x=-40.0, y=40.0, depth=140.0),
        JointConfig(x=40.0, y=40.0, depth=60.0),
        JointConfig(x=-40.0, y=-40.0, depth=140.0),
        JointConfig(x=40.0, y=-40.0, depth=60.0),
        JointConfig(x=-40.0, y=40.0, depth=60.0),
        JointConfig(x=40.0, y=40.0, depth=140.0),
        JointConfig(x=0.0, y=0.0, depth=100.0),
    ]
    extras = [
        JointConfig(x=0.0, y=0.0, pan=np.deg2rad(10.0), depth=120.0),
        JointConfig(x=0.0, y=0.0, tilt=np.deg2rad(10.0), depth=120.0),
        JointConfig(x=-20.0, y=20.0, tilt=np.deg2rad(-10.0), depth=80.0),
        JointConfig(x=20.0, y=-20.0, pan=np.deg2rad(-10.0), depth=80.0),
    ]
    pool = corners + extras
    if n < 3:
        raise TooFewPoints("need at least 3 insertions")
    if n <= len(pool):
        return pool[:n]
    reps = pool * (n // len(pool) + 1)
    return reps[:n]


def workspace_prediction_error(true_transform: RigidTransform,
                               solved: RigidTransform,
                               grid_n: int = 20) -> float:
    """Max disagreement between the true and solved transforms over a grid of
    reachable tip positions."""
    xs = np.linspace(-45.0, 45.0, grid_n)
    zs = np.linspace(-45.0, 45.0, grid_n)
    ys = np.linspace(0.0, 160.0, grid_n)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    err = np.linalg.norm(true_transform.apply(pts) - solved.apply(pts), axis=1)
    return float(err.max())
