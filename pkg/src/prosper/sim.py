"""Deformable-phantom needle insertion simulator.

The prostate is a rigid body on a 6-DOF spring anchor at its rest centroid.
Insertion applies a cutting force (only while advancing into uncut tissue)
plus Coulomb shaft friction whose direction splits between axial feed and
circumferential spin; the gland moves to the quasi-static equilibrium of that
load every step.  Axial rotation of the needle therefore reduces the axial
friction component and with it the gland displacement.  Seeds deposit onto
the material point under the tip and move with the gland afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import (
    FractionOutOfRange,
    PassiveStopTriggered,
    TipOutsideProstate,
)
from .geom import (
    RayCaster,
    RigidTransform,
    TriMesh,
    contains_points,
    quat_from_axis_angle,
    scale_to_volume_factor,
    segment_mesh_clearance,
)
from .robot import NeedlePose


@dataclass(frozen=True)
class Phantom:
    prostate: TriMesh
    anchor_translation_stiffness: float = 0.5     # N/mm
    anchor_rotation_stiffness: float = 2000.0     # N*mm/rad
    friction_coefficient: float = 0.3
    tissue_pressure: float = 0.07                 # N/mm^2 normal on the shaft
    cutting_force: float = 0.4                    # N
    needle_radius: float = 0.6                    # mm
    deposit_sigma_mm: float = 0.3                 # isotropic deposit jitter
    arch: TriMesh | None = None
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("anchor_translation_stiffness", "anchor_rotation_stiffness",
                     "friction_coefficient", "tissue_pressure", "cutting_force",
                     "needle_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @cached_property
    def anchor(self) -> np.ndarray:
        return self.prostate.centroid()


@dataclass(frozen=True)
class InsertionParams:
    feed_rate: float = 5.0          # mm/s
    spin_rate: float = 0.0          # rad/s
    dt: float = 0.05                # s
    stop_force_threshold: float = 0.5  # N

    def __post_init__(self):
        if not self.feed_rate > 0:
            raise ValueError("feed_rate must be > 0")
        if self.spin_rate < 0:
            raise ValueError("spin_rate must be >= 0")
        if not (0.0 < self.dt <= 0.1):
            raise ValueError("dt must be in (0, 0.1]")


@dataclass
class PhantomState:
    prostate_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    needle: NeedlePose | None = None
    tip_travel: float = 0.0          # current tip distance beyond the entry plane
    embedded_depth: float = 0.0
    max_embedded: float = 0.0
    seeds_rest: list = field(default_factory=list)
    events: list = field(default_factory=list)
    time: float = 0.0
    peak_displacement: float = 0.0
    cutting: bool = False

    @property
    def seeds_world(self) -> list:
        return [self.prostate_pose.apply(s) for s in self.seeds_rest]

    def log(self, kind: str, detail: dict) -> None:
        self.events.append({"t": round(self.time, 9), "kind": kind, "detail": detail})


@dataclass(frozen=True)
class TrialResult:
    per_seed_error: np.ndarray
    mean_error: float
    max_error: float
    peak_prostate_displacement: float
    events: list
    seeds_rest: np.ndarray
    planned_rest: np.ndarray

    def __post_init__(self):
        if len(self.per_seed_error) and self.mean_error > self.max_error + 1e-12:
            raise ValueError("mean error cannot exceed max error")


def axial_friction_force(embedded_depth: float, v: float, omega: float,
                         phantom: Phantom) -> float:
    """Coulomb shaft friction along the needle axis.

    The sliding direction splits between feed v and surface speed omega*r_n,
    so the axial component carries the factor v / sqrt(v^2 + (omega*r_n)^2).
    """
    if embedded_depth < 0:
        raise ValueError("embedded_depth must be >= 0")
    area = 2.0 * np.pi * phantom.needle_radius * embedded_depth
    normal_load = phantom.friction_coefficient * phantom.tissue_pressure * area
    surface_speed = omega * phantom.needle_radius
    return normal_load * v / np.sqrt(v * v + surface_speed * surface_speed)


def _equilibrium_pose(force: float, direction: np.ndarray, entry: np.ndarray,
                      phantom: Phantom, k_t: float, k_r: float) -> RigidTransform:
    """Quasi-static gland pose under an axial force applied along the needle line."""
    if force == 0.0:
        return RigidTransform.identity()
    anchor = phantom.anchor
    delta = (force / k_t) * direction
    # torque about the anchor: the resultant acts along the needle line
    to_line = (entry - anchor) - ((entry - anchor) @ direction) * direction
    lever = np.linalg.norm(to_line)
    if lever < 1e-12:
        rot = np.array([1.0, 0.0, 0.0, 0.0])
    else:
        axis = np.cross(to_line / lever, direction)
        axis_norm = np.linalg.norm(axis)
        if axis_norm < 1e-12:
            rot = np.array([1.0, 0.0, 0.0, 0.0])
        else:
            angle = force * lever / k_r
            rot = quat_from_axis_angle(axis / axis_norm, angle)
    pose_rot = RigidTransform(rot, np.zeros(3))
    # x_world = R (x - anchor) + anchor + delta
    translation = anchor + delta - pose_rot.apply(anchor)
    return RigidTransform(rot, translation)


CHORD_FILTER_MARGIN_MM = 14.0  # safely above any reachable gland displacement


def _chord_caster(phantom: Phantom, pose: NeedlePose) -> RayCaster:
    """Ray target from the rest-pose gland faces near the world needle line.

    Per-step chord queries only cross faces within the gland's displacement
    of the line; the margin is far above the spring model's reachable range.
    """
    mesh = phantom.prostate
    rel = mesh.vertices - pose.entry
    along = rel @ pose.direction
    perp = np.linalg.norm(rel - along[:, None] * pose.direction, axis=1)
    near = perp < CHORD_FILTER_MARGIN_MM
    keep = near[mesh.faces].any(axis=1)
    if not keep.any():
        return RayCaster(mesh)
    return RayCaster(mesh, keep)


def _needle_chord(state: PhantomState, phantom: Phantom,
                  caster: RayCaster | None = None) -> tuple[float, float]:
    """Needle-line crossing interval of the gland, in tip-travel coordinates."""
    pose_inv = state.prostate_pose.invert()
    origin = pose_inv.apply(state.needle.entry)
    direction = pose_inv.matrix() @ state.needle.direction
    if caster is None:
        caster = RayCaster(phantom.prostate)
    hits = caster.hits(origin, direction)
    if len(hits) < 2:
        return np.inf, np.inf
    return float(hits[0]), float(hits[-1])


def step_insertion(state: PhantomState, phantom: Phantom, params: InsertionParams,
                   k_t: float | None = None, k_r: float | None = None,
                   feed_sign: float = 1.0,
                   target_travel: float | None = None,
                   chord_caster: RayCaster | None = None,
                   arch_contact_possible: bool = True) -> PhantomState:
    """Advance the needle one time step and settle the gland.

    Raises PassiveStopTriggered when the needle presses the pubic arch
    (clearance under one needle radius) while the axial force exceeds the
    stop threshold.
    """
    if state.needle is None:
        raise ValueError("no needle engaged")
    k_t = phantom.anchor_translation_stiffness if k_t is None else k_t
    k_r = phantom.anchor_rotation_stiffness if k_r is None else k_r

    v = params.feed_rate
    step_len = v * params.dt
    new_travel = state.tip_travel + feed_sign * step_len
    if target_travel is not None:
        new_travel = (min(new_travel, target_travel) if feed_sign > 0
                      else max(new_travel, target_travel))
    new_travel = float(np.clip(new_travel, 0.0, state.needle.depth))
    state.time += params.dt
    state.tip_travel = new_travel

    t_in, t_out = _needle_chord(state, phantom, chord_caster)
    embedded = float(max(0.0, min(new_travel, t_out) - t_in)) if np.isfinite(t_in) else 0.0
    cutting = feed_sign > 0 and embedded > state.max_embedded + 1e-12

    friction = axial_friction_force(embedded, v, params.spin_rate, phantom)
    force_mag = (phantom.cutting_force if cutting else 0.0) + friction
    force = feed_sign * force_mag

    if phantom.arch is not None and arch_contact_possible and new_travel > 1e-9:
        tip_world = state.needle.entry + new_travel * state.needle.direction
        clearance, intersects = segment_mesh_clearance(
            state.needle.entry, tip_world, phantom.arch)
        if (intersects or clearance < phantom.needle_radius) and \
                force_mag > params.stop_force_threshold:
            state.log("passive_stop", {"travel_mm": new_travel,
                                       "clearance_mm": clearance,
                                       "force_N": force_mag})
            raise PassiveStopTriggered(state.time, f"clearance {clearance:.2f} mm")

    state.prostate_pose = _equilibrium_pose(
        force, state.needle.direction, state.needle.entry, phantom, k_t, k_r)
    displacement = float(np.linalg.norm(
        state.prostate_pose.apply(phantom.anchor) - phantom.anchor))
    state.peak_displacement = max(state.peak_displacement, displacement)

    state.embedded_depth = embedded
    state.cutting = cutting
    if cutting:
        state.max_embedded = embedded
    return state


def deposit_seed(state: PhantomState, phantom: Phantom) -> PhantomState:
    """Fix a seed to the gland material point currently under the tip."""
    if state.needle is None:
        raise TipOutsideProstate("no needle engaged")
    tip_world = state.needle.entry + state.tip_travel * state.needle.direction
    rest_point = state.prostate_pose.invert().apply(tip_world)
    if not contains_points(phantom.prostate, rest_point[None, :])[0]:
        raise TipOutsideProstate(f"tip at travel {state.tip_travel:.1f} mm is outside the gland")
    state.seeds_rest.append(rest_point)
    state.log("deposit", {"travel_mm": state.tip_travel,
                          "world": [round(x, 6) for x in tip_world],
                          "rest": [round(x, 6) for x in rest_point]})
    return state


def apply_edema(phantom: Phantom, fraction: float,
                allow_large: bool = False) -> Phantom:
    """Swell the gland by a volume fraction; anchors stay put."""
    if fraction < 0 or (fraction > 0.2 and not allow_large):
        raise FractionOutOfRange(f"edema fraction {fraction} outside [0, 0.2]")
    if fraction == 0:
        return phantom
    return replace(phantom, prostate=scale_to_volume_factor(phantom.prostate, 1.0 + fraction))


ADVANCE_EVENT_EVERY_MM = 5.0


def execute_plan(plan, phantom: Phantom, params: InsertionParams) -> TrialResult:
    """Run every planned trajectory through the phantom and measure seed error.

    The phantom seed perturbs the anchor stiffnesses by up to +/-10 % and
    drives the isotropic deposit jitter; everything else is deterministic.
    Trajectories stopped by the passive arch mechanism are skipped with an
    event record; remaining trajectories continue.
    """
    rng = np.random.default_rng(phantom.rng_seed)
    k_t = phantom.anchor_translation_stiffness * (1.0 + rng.uniform(-0.1, 0.1))
    k_r = phantom.anchor_rotation_stiffness * (1.0 + rng.uniform(-0.1, 0.1))

    state = PhantomState()
    planned_rest: list[np.ndarray] = []
    actual_rest: list[np.ndarray] = []

    for ti, traj in enumerate(plan.trajectories):
        pose = NeedlePose(traj.pose.entry, traj.pose.direction,
                          depth=traj.pose.depth, spin_rate=params.spin_rate)
        state.needle = pose
        state.tip_travel = 0.0
        state.embedded_depth = 0.0
        state.max_embedded = 0.0
        state.log("insertion_started", {"trajectory": ti,
                                        "entry": [round(x, 6) for x in pose.entry],
                                        "depth_mm": pose.depth})
        chord_caster = _chord_caster(phantom, pose)
        # the needle clearance is non-increasing in travel: when the full
        # segment clears the arch by a needle radius there is no contact at
        # any step of this trajectory
        arch_possible = False
        if phantom.arch is not None:
            full_tip = pose.entry + pose.depth * pose.direction
            clearance, intersects = segment_mesh_clearance(
                pose.entry, full_tip, phantom.arch)
            arch_possible = intersects or clearance < phantom.needle_radius
        try:
            last_event_travel = 0.0
            for depth in traj.seed_depths:      # descending: deposit on the way out
                sign = 1.0 if depth >= state.tip_travel else -1.0
                while abs(state.tip_travel - depth) > 1e-9:
                    step_insertion(state, phantom, params, k_t, k_r,
                                   feed_sign=sign, target_travel=depth,
                                   chord_caster=chord_caster,
                                   arch_contact_possible=arch_possible)
                    if abs(state.tip_travel - last_event_travel) >= ADVANCE_EVENT_EVERY_MM:
                        last_event_travel = state.tip_travel
                        disp = float(np.linalg.norm(
                            state.prostate_pose.apply(phantom.anchor) - phantom.anchor))
                        state.log("advance", {"trajectory": ti,
                                              "travel_mm": round(state.tip_travel, 3),
                                              "displacement_mm": round(disp, 4)})
                try:
                    deposit_seed(state, phantom)
                except TipOutsideProstate:
                    # gland ran away from the tip: the seed embeds in the
                    # static surroundings at the current world position
                    tip_world = pose.entry + state.tip_travel * pose.direction
                    state.seeds_rest.append(tip_world)
                    state.log("deposit_outside_gland",
                              {"travel_mm": state.tip_travel,
                               "world": [round(x, 6) for x in tip_world]})
                jitter = rng.normal(0.0, phantom.deposit_sigma_mm, size=3) \
                    if phantom.deposit_sigma_mm > 0 else np.zeros(3)
                state.seeds_rest[-1] = state.seeds_rest[-1] + jitter
                planned_rest.append(pose.entry + depth * pose.direction)
                actual_rest.append(state.seeds_rest[-1])
            # retract fully
            while state.tip_travel > 1e-9:
                step_insertion(state, phantom, params, k_t, k_r,
                               feed_sign=-1.0, target_travel=0.0,
                               chord_caster=chord_caster,
                               arch_contact_possible=arch_possible)
        except PassiveStopTriggered:
            state.log("trajectory_skipped", {"trajectory": ti})
        state.needle = None
        state.prostate_pose = RigidTransform.identity()
        state.log("relaxed", {"trajectory": ti})

    planned = np.array(planned_rest) if planned_rest else np.zeros((0, 3))
    actual = np.array(actual_rest) if actual_rest else np.zeros((0, 3))
    errors = np.linalg.norm(actual - planned, axis=1) if len(planned) else np.zeros(0)
    mean_error = float(errors.mean()) if len(errors) else 0.0
    max_error = float(errors.max()) if len(errors) else 0.0
    return TrialResult(errors, mean_error, max_error, state.peak_displacement,
                       state.events, actual, planned)
