"""Point-source dose model, coverage metrics, and seed placement planning.

Dose from one source: D(r) = strength * dose_rate_constant * (r0/r)^2 * g(r)
* integration_factor with r0 = 10 mm and g interpolated from a radial table
normalized to g(r0) = 1.  The integration factor converts the initial dose
rate into the total implant dose in Gy.  Planning is a deterministic greedy
coverage maximization over template (optionally oblique) trajectories with a
single-seed relocation pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateSegment,
    InfeasibleNoTrajectories,
    OpenMesh,
    TargetOutsideWorkspace,
)
from . import robot
from .geom import TriMesh, contains_points, ray_mesh_hits, segment_mesh_clearance
from .robot import JointLimits, NeedlePose

R0_MM = 10.0
MIN_SEED_SPACING_MM = 5.0
CLAMP_RADIUS_MM = 0.5

# conventional I-125 radial dose values, (mm, unitless), g(10 mm) = 1
DEFAULT_G_TABLE = (
    (1.0, 1.055),
    (5.0, 1.035),
    (10.0, 1.000),
    (20.0, 0.925),
    (30.0, 0.820),
    (50.0, 0.595),
    (100.0, 0.170),
)


@dataclass(frozen=True)
class Seed:
    position: np.ndarray
    strength: float  # air-kerma strength, U

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float))
        if not self.strength > 0:
            raise ValueError("seed strength must be > 0")


@dataclass(frozen=True)
class DoseParams:
    dose_rate_constant: float = 0.965          # cGy / (h * U)
    radial_dose_table: tuple = DEFAULT_G_TABLE
    prescription: float = 145.0                 # Gy
    integration_factor: float = 20.574          # initial cGy/h -> total Gy
    seed_strength: float = 0.5                  # U, planner default per seed

    def __post_init__(self):
        if not self.dose_rate_constant > 0 or not self.prescription > 0:
            raise ValueError("dose parameters must be positive")
        table = np.asarray(self.radial_dose_table, float)
        if table[0, 0] > 1.0 or table[-1, 0] < 100.0:
            raise ValueError("radial dose table must cover [1, 100] mm")

    @property
    def g_radii(self) -> np.ndarray:
        return np.asarray(self.radial_dose_table, float)[:, 0]

    @property
    def g_values(self) -> np.ndarray:
        return np.asarray(self.radial_dose_table, float)[:, 1]


@dataclass(frozen=True)
class Trajectory:
    pose: NeedlePose
    seed_depths: tuple   # descending deposit order

    def __post_init__(self):
        depths = tuple(float(d) for d in self.seed_depths)
        object.__setattr__(self, "seed_depths", depths)
        if any(b > a for a, b in zip(depths, depths[1:])):
            raise ValueError("seed depths must be in descending deposit order")
        if depths and (depths[0] > self.pose.depth + 1e-9 or depths[-1] < 0):
            raise ValueError("seed depths outside the pose insertion range")
        gaps = [a - b for a, b in zip(depths, depths[1:])]
        if any(g < MIN_SEED_SPACING_MM - 1e-9 for g in gaps):
            raise ValueError("seeds closer than the minimum along-needle spacing")

    def seed_positions(self) -> np.ndarray:
        if not self.seed_depths:
            return np.zeros((0, 3))
        d = np.asarray(self.seed_depths)[:, None]
        return self.pose.entry + d * self.pose.direction


@dataclass(frozen=True)
class PlanMetrics:
    d90: float
    v100: float
    seed_count: int


@dataclass(frozen=True)
class Plan:
    trajectories: tuple
    metrics: PlanMetrics
    v100_trace: tuple = ()   # coverage after each greedy addition / search pass

    def seeds(self, strength: float) -> list[Seed]:
        out = []
        for t in self.trajectories:
            for p in t.seed_positions():
                out.append(Seed(p, strength))
        return out


def dose_at(p: np.ndarray, seeds: list[Seed], params: DoseParams) -> float:
    """Total dose in Gy at a point; radii under 0.5 mm are clamped."""
    return float(dose_at_many(np.asarray(p, float)[None, :], seeds, params)[0])


def dose_at_many(points: np.ndarray, seeds: list[Seed], params: DoseParams) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, float))
    total = np.zeros(len(pts))
    if not seeds:
        return total
    positions = np.array([s.position for s in seeds])
    strengths = np.array([s.strength for s in seeds])
    g_r, g_v = params.g_radii, params.g_values
    for chunk in range(0, len(pts), 65536):
        block = pts[chunk:chunk + 65536]
        r = np.linalg.norm(block[:, None, :] - positions[None, :, :], axis=2)
        r = np.maximum(r, CLAMP_RADIUS_MM)
        g = np.interp(r, g_r, g_v)
        dose = (strengths * params.dose_rate_constant * params.integration_factor
                * (R0_MM / r) ** 2 * g)
        total[chunk:chunk + 65536] = dose.sum(axis=1)
    return total


def interior_samples(target: TriMesh, n_samples: int, rng_seed: int) -> np.ndarray:
    """Jittered-lattice samples inside the mesh, deterministic for a seed."""
    target.check_closed()
    rng = np.random.default_rng(rng_seed)
    lo, hi = target.bounds()
    per_axis = int(np.ceil(n_samples ** (1.0 / 3.0)))
    edges = [np.linspace(lo[d], hi[d], per_axis + 1) for d in range(3)]
    cell = np.array([e[1] - e[0] for e in edges])
    base = np.stack(np.meshgrid(*[e[:-1] for e in edges], indexing="ij"), axis=-1).reshape(-1, 3)
    pts = base + rng.uniform(0.0, 1.0, size=base.shape) * cell
    return pts[contains_points(target, pts)]


def compute_metrics(target: TriMesh, seeds: list[Seed], params: DoseParams,
                    n_samples: int = 10_000, rng_seed: int = 0) -> PlanMetrics:
    """Coverage metrics from stratified interior sampling.

    d90 is the 10th percentile of sampled doses, v100 the fraction at or
    above the prescription.
    """
    if n_samples < 10_000:
        raise ValueError("n_samples must be >= 10000")
    pts = interior_samples(target, n_samples, rng_seed)
    if not seeds:
        return PlanMetrics(0.0, 0.0, 0)
    doses = dose_at_many(pts, seeds, params)
    d90 = float(np.percentile(doses, 10.0))
    v100 = float(np.mean(doses >= params.prescription))
    return PlanMetrics(d90, v100, len(seeds))


def check_arch_conflict(traj: Trajectory, arch: TriMesh,
                        margin: float) -> tuple[bool, float]:
    """Clearance of the needle segment against the pubic arch.

    Conflict when the segment crosses the arch or clears it by less than the
    margin.  Returns (conflict, clearance).
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    if traj.pose.depth <= 0:
        raise DegenerateSegment("trajectory has zero insertion depth")
    clearance, intersects = segment_mesh_clearance(
        traj.pose.entry, traj.pose.tip, arch)
    return intersects or clearance < margin, clearance


@dataclass(frozen=True)
class PlanConstraints:
    max_seeds: int = 80
    margin: float = 1.0  # mm of arch clearance
    v100_goal: float = 0.95


OBLIQUE_TILTS_DEG = (0.0, 10.0, -10.0, 15.0, -15.0)


@dataclass(frozen=True)
class _Candidate:
    hole: tuple
    tilt_deg: float
    pose: NeedlePose       # with depth set to the deepest usable site
    depths: tuple          # ascending site depths


def _candidate_trajectories(target: TriMesh, arch: TriMesh | None, mode: str,
                            constraints: PlanConstraints,
                            limits: JointLimits) -> list[_Candidate]:
    tilts = (0.0,) if mode == "grid" else OBLIQUE_TILTS_DEG
    half = robot.GRID_HALF_INDEX
    reachable = 0
    arch_blocked = 0
    out = []
    for col in range(-half, half + 1):
        for row in range(-half, half + 1):
            base = robot.grid_target(col, row)
            for tilt in tilts:
                t = np.deg2rad(tilt)
                direction = np.array([0.0, np.cos(t), np.sin(t)])
                pose = NeedlePose(base.entry, direction)
                hits = ray_mesh_hits(pose.entry, direction, target)
                if len(hits) < 2:
                    continue
                t_in, t_out = float(hits[0]), float(hits[-1])
                first = t_in + 2.0
                last = t_out - 2.0
                if last < first:
                    continue
                depths = tuple(np.arange(first, last + 1e-9, MIN_SEED_SPACING_MM))
                pose = NeedlePose(pose.entry, direction, depth=depths[-1])
                if not robot.workspace_contains(pose, limits):
                    continue
                reachable += 1
                traj = Trajectory(pose, tuple(sorted(depths, reverse=True)))
                if arch is not None:
                    conflict, _ = check_arch_conflict(traj, arch, constraints.margin)
                    if conflict:
                        arch_blocked += 1
                        continue
                out.append(_Candidate((col, row), tilt, pose, depths))
    if out:
        return out
    if reachable and arch_blocked == reachable:
        raise InfeasibleNoTrajectories(
            f"all {reachable} reachable trajectories are arch-blocked")
    raise TargetOutsideWorkspace("no in-workspace trajectory intersects the target")


def plan_seeds(target: TriMesh, arch: TriMesh | None, params: DoseParams,
               mode: str = "grid",
               constraints: PlanConstraints | None = None,
               rng_seed: int = 0,
               limits: JointLimits = robot.DEFAULT_LIMITS,
               metric_samples: int = 10_000) -> Plan:
    """Greedy coverage planning with single-seed relocation.

    Candidate sites are 5 mm-spaced depths inside the target along template
    trajectories (grid mode) or template-by-tilt combinations (oblique mode),
    pre-filtered by workspace and arch clearance.  Seeds are added by maximal
    v100 gain, ties broken lexicographically; a relocation pass then moves
    single seeds while any move improves coverage.  Fully deterministic.
    """
    if mode not in ("grid", "oblique"):
        raise ValueError(f"unknown planning mode '{mode}'")
    constraints = constraints or PlanConstraints()
    target.check_closed()
    candidates = _candidate_trajectories(target, arch, mode, constraints, limits)

    # flat site list in lexicographic (trajectory, depth) order
    sites = []       # (traj index, depth)
    positions = []
    for ci, cand in enumerate(candidates):
        for depth in cand.depths:
            sites.append((ci, depth))
            positions.append(cand.pose.entry + depth * cand.pose.direction)
    positions = np.array(positions)

    samples = interior_samples(target, metric_samples, rng_seed)
    # per-site dose field over the sample set
    g_r, g_v = params.g_radii, params.g_values
    r = np.linalg.norm(samples[None, :, :] - positions[:, None, :], axis=2)
    r = np.maximum(r, CLAMP_RADIUS_MM)
    site_dose = ((params.seed_strength * params.dose_rate_constant
                  * params.integration_factor) * (R0_MM / r) ** 2
                 * np.interp(r, g_r, g_v)).astype(np.float32)

    presc = params.prescription
    n_sites = len(sites)
    selected: list[int] = []
    total = np.zeros(len(samples), dtype=np.float64)
    v100_trace = [0.0]

    def v100_of(dose_vec) -> float:
        return float(np.mean(dose_vec >= presc))

    if constraints.max_seeds > 0:
        taken = np.zeros(n_sites, dtype=bool)
        while len(selected) < constraints.max_seeds:
            below = total < presc
            newly = (total[None, :] + site_dose >= presc) & below[None, :]
            gains = newly.sum(axis=1)
            gains[taken] = -1
            best = int(np.argmax(gains))   # first maximum = lexicographic tie-break
            if gains[best] <= 0:
                break
            selected.append(best)
            taken[best] = True
            total = total + site_dose[best]
            v100_trace.append(v100_of(total))
            if v100_trace[-1] >= constraints.v100_goal:
                break

        # local search: relocate single seeds while coverage improves;
        # a real improvement covers at least one more sample (v100 is
        # quantized by the sample count, anything smaller is float jitter).
        # Runs only when greedy stalled below the coverage goal.
        min_gain = 0.5 / max(len(samples), 1)
        improved = v100_of(total) < constraints.v100_goal
        guard = 0
        while improved and guard < 200:
            improved = False
            guard += 1
            for si, site in enumerate(list(selected)):
                base = total - site_dose[site]
                covered = ((base[None, :] + site_dose) >= presc).mean(axis=1)
                covered[taken] = -1.0
                covered[site] = v100_of(base + site_dose[site])
                best_j = int(np.argmax(covered))
                if best_j != site and covered[best_j] > covered[site] + min_gain:
                    taken[site] = False
                    taken[best_j] = True
                    selected[si] = best_j
                    total = base + site_dose[best_j]
                    improved = True
            v100_trace.append(v100_of(total))

    # assemble trajectories from the selected sites
    chosen: dict[int, list[float]] = {}
    for site_idx in selected:
        ci, depth = sites[site_idx]
        chosen.setdefault(ci, []).append(depth)
    trajectories = []
    for ci in sorted(chosen):
        cand = candidates[ci]
        depths = sorted(chosen[ci], reverse=True)
        pose = NeedlePose(cand.pose.entry, cand.pose.direction,
                          depth=max(depths))
        trajectories.append(Trajectory(pose, tuple(depths)))

    seeds = [Seed(positions[i], params.seed_strength) for i in selected]
    doses = total
    d90 = float(np.percentile(doses, 10.0)) if seeds else 0.0
    v100 = v100_of(total) if seeds else 0.0
    metrics = PlanMetrics(d90, v100, len(seeds))
    return Plan(tuple(trajectories), metrics, tuple(v100_trace))


def dose_slice(seeds: list[Seed], params: DoseParams, axis: str,
               offset_mm: float, bounds_lo, bounds_hi,
               resolution: int = 64) -> dict:
    """Dose sampled on a 2-D grid for isoline rendering.

    axis names the constant coordinate ('x', 'y' or 'z'); the returned grid
    spans the other two axes in index order.
    """
    axes = {"x": 0, "y": 1, "z": 2}
    if axis not in axes:
        raise ValueError(f"axis must be one of {sorted(axes)}")
    a = axes[axis]
    others = [d for d in range(3) if d != a]
    lo = np.asarray(bounds_lo, float)
    hi = np.asarray(bounds_hi, float)
    u = np.linspace(lo[others[0]], hi[others[0]], resolution)
    v = np.linspace(lo[others[1]], hi[others[1]], resolution)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.zeros((resolution * resolution, 3))
    pts[:, a] = offset_mm
    pts[:, others[0]] = uu.ravel()
    pts[:, others[1]] = vv.ravel()
    doses = dose_at_many(pts, seeds, params)
    return {
        "axis": axis,
        "offset_mm": float(offset_mm),
        "u_axis": "xyz"[others[0]],
        "v_axis": "xyz"[others[1]],
        "u_range": [float(u[0]), float(u[-1])],
        "v_range": [float(v[0]), float(v[-1])],
        "resolution": resolution,
        "values": doses.reshape(resolution, resolution).tolist(),
    }
