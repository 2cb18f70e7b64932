"""Versioned JSON documents for every data product, plus mesh file import.

One self-describing envelope wraps all kinds::

    {"version": "1.0.0", "kind": "...", "payload": {...},
     "provenance": {"created_by": ..., "timestamp": ..., "config_hash": ...}}

Files use the .prosper.json extension.  Bare mesh files ({version, vertices,
faces}) and ASCII PLY surfaces are accepted by the mesh importer.
"""

from __future__ import annotations

import datetime as _dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .calib import CalibrationObservation, CalibrationResult
from .dose import DoseParams, Plan, PlanMetrics, Seed, Trajectory
from .errors import OpenMesh, UnknownKind, UnsupportedVersion
from .geom import RigidTransform, TriMesh, mesh_volume
from .register import DeformationField, RegistrationResult
from .robot import JointConfig, JointLimits, NeedlePose, RobotDescription
from .shape import ShapeModel
from .sim import Phantom, TrialResult

SCHEMA_VERSION = "1.0.0"
KINDS = ("mesh", "robot", "calibration", "shape_model", "field", "plan",
         "phantom", "trial", "scenario")
FILE_SUFFIX = ".prosper.json"


@dataclass(frozen=True)
class Document:
    kind: str
    payload: dict
    version: str = SCHEMA_VERSION
    provenance: dict = field(default_factory=dict)


def make_document(kind: str, payload: dict, config_hash: str = "") -> Document:
    if kind not in KINDS:
        raise UnknownKind(f"unknown document kind '{kind}'")
    prov = {
        "created_by": f"prosper {__version__}",
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config_hash": config_hash,
    }
    return Document(kind=kind, payload=payload, provenance=prov)


def to_json(doc: Document) -> str:
    return json.dumps({"version": doc.version, "kind": doc.kind,
                       "payload": doc.payload, "provenance": doc.provenance},
                      indent=1)


def parse_document(data: str | dict) -> Document:
    obj = json.loads(data) if isinstance(data, str) else data
    version = obj.get("version", "")
    major = version.split(".")[0] if version else ""
    if major != SCHEMA_VERSION.split(".")[0]:
        raise UnsupportedVersion(f"document version '{version}' not readable")
    kind = obj.get("kind", "")
    if kind not in KINDS:
        raise UnknownKind(f"unknown document kind '{kind}'")
    return Document(kind=kind, payload=obj.get("payload", {}),
                    version=version, provenance=obj.get("provenance", {}))


def save_document(doc: Document, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(to_json(doc), encoding="utf-8")
    return path


def load_document(path: str | Path) -> Document:
    return parse_document(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# payload builders / parsers per kind
# ---------------------------------------------------------------------------

def mesh_payload(m: TriMesh) -> dict:
    return {"vertices": m.vertices.tolist(), "faces": m.faces.tolist()}


def mesh_from_payload(p: dict) -> TriMesh:
    return TriMesh(np.asarray(p["vertices"], float), np.asarray(p["faces"], int))


def robot_payload(r: RobotDescription) -> dict:
    return {
        "joint_limits": {k: list(getattr(r.limits, k))
                         for k in ("x", "y", "z", "pan", "tilt", "depth")},
        "grid_pitch": r.grid_pitch,
        "grid_half_index": r.grid_half_index,
    }


def robot_from_payload(p: dict) -> RobotDescription:
    limits = JointLimits(**{k: tuple(v) for k, v in p["joint_limits"].items()})
    return RobotDescription(limits=limits, grid_pitch=p["grid_pitch"],
                            grid_half_index=p["grid_half_index"])


def _rigid_payload(t: RigidTransform) -> dict:
    return {"rotation": t.rotation.tolist(), "translation": t.translation.tolist()}


def _rigid_from_payload(p: dict) -> RigidTransform:
    return RigidTransform(np.asarray(p["rotation"], float),
                          np.asarray(p["translation"], float))


def _config_payload(q: JointConfig) -> dict:
    return asdict(q)


def calibration_payload(observations: list[CalibrationObservation],
                        result: CalibrationResult, meta: dict | None = None) -> dict:
    return {
        "observations": [{"config": _config_payload(o.config),
                          "tip_us": o.tip_us.tolist()} for o in observations],
        "us_from_robot": _rigid_payload(result.us_from_robot),
        "rms_residual": result.rms_residual,
        "per_point_residuals": np.asarray(result.per_point_residuals).tolist(),
        "solver": meta or {"method": "svd-absolute-orientation"},
    }


def calibration_from_payload(p: dict) -> tuple[list[CalibrationObservation], CalibrationResult]:
    obs = [CalibrationObservation(JointConfig(**o["config"]),
                                  np.asarray(o["tip_us"], float))
           for o in p["observations"]]
    result = CalibrationResult(_rigid_from_payload(p["us_from_robot"]),
                               p["rms_residual"],
                               np.asarray(p["per_point_residuals"], float))
    return obs, result


def shape_model_payload(m: ShapeModel) -> dict:
    return {
        "mean_vertices": m.mean_vertices.tolist(),
        "modes": m.modes.tolist(),
        "variances": m.variances.tolist(),
        "faces": m.faces.tolist(),
    }


def shape_model_from_payload(p: dict) -> ShapeModel:
    return ShapeModel(np.asarray(p["mean_vertices"], float),
                      np.asarray(p["modes"], float),
                      np.asarray(p["variances"], float),
                      np.asarray(p["faces"], int))


def field_payload(r: RegistrationResult) -> dict:
    return {
        "control_points": r.field.control_points.tolist(),
        "tps_weights": r.field.tps_weights.tolist(),
        "affine": r.field.affine.tolist(),
        "diagnostics": {"surface_rms": r.surface_rms,
                        "volume_error": r.volume_error,
                        "iterations": r.iterations,
                        "converged": r.converged},
    }


def field_from_payload(p: dict) -> DeformationField:
    return DeformationField(np.asarray(p["control_points"], float),
                            np.asarray(p["tps_weights"], float),
                            np.asarray(p["affine"], float))


def _pose_payload(pose: NeedlePose) -> dict:
    return {"entry": pose.entry.tolist(), "direction": pose.direction.tolist(),
            "depth": pose.depth, "spin_rate": pose.spin_rate}


def _pose_from_payload(p: dict) -> NeedlePose:
    return NeedlePose(np.asarray(p["entry"], float),
                      np.asarray(p["direction"], float),
                      depth=p["depth"], spin_rate=p["spin_rate"])


def plan_payload(plan: Plan, params: DoseParams, mode: str = "",
                 extras: dict | None = None) -> dict:
    seeds = plan.seeds(params.seed_strength)
    return {
        "trajectories": [{"pose": _pose_payload(t.pose),
                          "seed_depths": list(t.seed_depths)}
                         for t in plan.trajectories],
        "seeds": [{"position": s.position.tolist(), "strength": s.strength}
                  for s in seeds],
        "metrics": asdict(plan.metrics),
        "params": {"mode": mode, **asdict(params), **(extras or {})},
    }


def plan_from_payload(p: dict) -> tuple[Plan, DoseParams]:
    trajectories = tuple(
        Trajectory(_pose_from_payload(t["pose"]), tuple(t["seed_depths"]))
        for t in p["trajectories"])
    m = p["metrics"]
    plan = Plan(trajectories, PlanMetrics(m["d90"], m["v100"], m["seed_count"]))
    keys = ("dose_rate_constant", "radial_dose_table", "prescription",
            "integration_factor", "seed_strength")
    raw = {k: p["params"][k] for k in keys if k in p["params"]}
    if "radial_dose_table" in raw:
        raw["radial_dose_table"] = tuple(tuple(x) for x in raw["radial_dose_table"])
    return plan, DoseParams(**raw)


def phantom_payload(ph: Phantom) -> dict:
    return {
        "prostate": mesh_payload(ph.prostate),
        "arch": mesh_payload(ph.arch) if ph.arch is not None else None,
        "anchor_translation_stiffness": ph.anchor_translation_stiffness,
        "anchor_rotation_stiffness": ph.anchor_rotation_stiffness,
        "friction_coefficient": ph.friction_coefficient,
        "tissue_pressure": ph.tissue_pressure,
        "cutting_force": ph.cutting_force,
        "needle_radius": ph.needle_radius,
        "deposit_sigma_mm": ph.deposit_sigma_mm,
        "rng_seed": ph.rng_seed,
    }


def phantom_from_payload(p: dict) -> Phantom:
    return Phantom(
        prostate=mesh_from_payload(p["prostate"]),
        arch=mesh_from_payload(p["arch"]) if p.get("arch") else None,
        anchor_translation_stiffness=p["anchor_translation_stiffness"],
        anchor_rotation_stiffness=p["anchor_rotation_stiffness"],
        friction_coefficient=p["friction_coefficient"],
        tissue_pressure=p["tissue_pressure"],
        cutting_force=p["cutting_force"],
        needle_radius=p["needle_radius"],
        deposit_sigma_mm=p["deposit_sigma_mm"],
        rng_seed=p["rng_seed"],
    )


def trial_payload(t: TrialResult) -> dict:
    return {
        "per_seed_error": np.asarray(t.per_seed_error).tolist(),
        "mean_error": t.mean_error,
        "max_error": t.max_error,
        "peak_prostate_displacement": t.peak_prostate_displacement,
        "events": t.events,
        "seeds_rest": np.asarray(t.seeds_rest).tolist(),
        "planned_rest": np.asarray(t.planned_rest).tolist(),
    }


def trial_from_payload(p: dict) -> TrialResult:
    return TrialResult(np.asarray(p["per_seed_error"], float),
                       p["mean_error"], p["max_error"],
                       p["peak_prostate_displacement"], p["events"],
                       np.asarray(p["seeds_rest"], float).reshape(-1, 3),
                       np.asarray(p["planned_rest"], float).reshape(-1, 3))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _mesh_violations(p: dict, where: str = "") -> list[str]:
    out = []
    try:
        m = mesh_from_payload(p)
    except Exception as exc:
        return [f"{where}malformed mesh payload: {exc}"]
    try:
        vol = mesh_volume(m)
        if vol <= 0:
            out.append(f"{where}non-positive volume {vol}")
    except OpenMesh as exc:
        out.append(f"{where}OpenMesh: {exc}")
    except Exception as exc:
        out.append(f"{where}{exc}")
    return out


def validate(doc: Document) -> list[str]:
    """Violations of the payload's type invariants; empty when clean."""
    kind = doc.kind
    if kind not in KINDS:
        raise UnknownKind(f"unknown document kind '{kind}'")
    p = doc.payload
    out: list[str] = []
    try:
        if kind == "mesh":
            out += _mesh_violations(p)
        elif kind == "robot":
            robot_from_payload(p)
        elif kind == "calibration":
            _, result = calibration_from_payload(p)
            res = np.asarray(result.per_point_residuals, float)
            if result.rms_residual < 0:
                out.append("negative rms residual")
            if len(res) and abs(result.rms_residual ** 2 - np.mean(res ** 2)) > 1e-9 * max(1.0, result.rms_residual ** 2):
                out.append("rms does not match per-point residuals")
        elif kind == "shape_model":
            model = shape_model_from_payload(p)
            if model.n_modes:
                gram = model.modes @ model.modes.T
                if np.abs(gram - np.eye(model.n_modes)).max() > 1e-6:
                    out.append("modes not orthonormal")
                lam = model.variances
                if np.any(np.diff(lam) > 1e-12) or np.any(lam <= 0):
                    out.append("variances not positive-descending")
            out += _mesh_violations(mesh_payload(model.mean_mesh()), "mean mesh: ")
        elif kind == "field":
            field_from_payload(p)
        elif kind == "plan":
            plan, _ = plan_from_payload(p)
            m = plan.metrics
            if not (0.0 <= m.v100 <= 1.0):
                out.append(f"v100 {m.v100} outside [0, 1]")
            if m.d90 < 0:
                out.append(f"negative d90 {m.d90}")
        elif kind == "phantom":
            ph = phantom_from_payload(p)
            out += _mesh_violations(mesh_payload(ph.prostate), "prostate: ")
            if ph.arch is not None:
                out += _mesh_violations(mesh_payload(ph.arch), "arch: ")
        elif kind == "trial":
            t = trial_from_payload(p)
            if len(t.per_seed_error) and np.any(np.asarray(t.per_seed_error) < 0):
                out.append("negative per-seed error")
            if t.mean_error > t.max_error + 1e-12:
                out.append("mean error exceeds max error")
        elif kind == "scenario":
            for key in ("phantom", "robot", "shape_model"):
                if key not in p:
                    out.append(f"scenario missing '{key}'")
            if "phantom" in p:
                out += validate(Document("phantom", p["phantom"]))
            if "robot" in p:
                out += validate(Document("robot", p["robot"]))
            if "shape_model" in p:
                out += validate(Document("shape_model", p["shape_model"]))
    except Exception as exc:  # malformed payloads become violations, not crashes
        out.append(f"{type(exc).__name__}: {exc}")
    return out


# ---------------------------------------------------------------------------
# mesh file import (envelope, bare JSON, or ASCII PLY)
# ---------------------------------------------------------------------------

def _parse_ascii_ply(text: str) -> TriMesh:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError("not a PLY file")
    n_vert = n_face = 0
    vertex_props: list[str] = []
    in_vertex_element = False
    idx = 1
    while idx < len(lines):
        parts = lines[idx].strip().split()
        idx += 1
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "ascii":
            raise ValueError("only ASCII PLY is supported")
        if parts[0] == "element":
            in_vertex_element = parts[1] == "vertex"
            if parts[1] == "vertex":
                n_vert = int(parts[2])
            elif parts[1] == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and in_vertex_element:
            vertex_props.append(parts[-1])
        elif parts[0] == "end_header":
            break
    coord_cols = [vertex_props.index(c) for c in ("x", "y", "z")]
    verts = np.array([[float(lines[idx + i].split()[c]) for c in coord_cols]
                      for i in range(n_vert)])
    idx += n_vert
    faces = []
    for i in range(n_face):
        parts = lines[idx + i].split()
        count = int(parts[0])
        poly = [int(x) for x in parts[1:1 + count]]
        for k in range(1, count - 1):   # fan-triangulate
            faces.append([poly[0], poly[k], poly[k + 1]])
    return TriMesh(verts, np.array(faces, dtype=int))


def load_mesh_file(path: str | Path) -> TriMesh:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("ply"):
        return _parse_ascii_ply(text)
    obj = json.loads(text)
    if "kind" in obj:
        doc = parse_document(obj)
        if doc.kind != "mesh":
            raise UnknownKind(f"expected a mesh document, got '{doc.kind}'")
        return mesh_from_payload(doc.payload)
    if "vertices" in obj and "faces" in obj:
        return mesh_from_payload(obj)
    raise ValueError(f"{path} is not a recognized mesh file")
