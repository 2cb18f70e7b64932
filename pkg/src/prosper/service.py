"""Session-oriented HTTP service backing the interactive planning console.

Sessions are in-memory; every mutating request carries the revision it was
issued against and bumps it by exactly one (optimistic concurrency).  All
numbers the console displays come from here: coverage metrics, dose slices,
and the insertion event feed are computed server-side.
"""

from __future__ import annotations

import hashlib
import json
import threading
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from . import io as docio
from .config import config_hash, defaults
from .dose import (
    DoseParams,
    Plan,
    PlanConstraints,
    PlanMetrics,
    Seed,
    Trajectory,
    check_arch_conflict,
    dose_at_many,
    dose_slice,
    interior_samples,
    plan_seeds,
)
from .errors import (
    InfeasibleNoTrajectories,
    ProsperError,
    RevisionConflict,
    TargetOutsideWorkspace,
    UnknownScenario,
    UnknownSession,
)
from .geom import TriMesh
from .robot import NeedlePose, grid_target, workspace_contains
from .scenarios import ScenarioBundle, load_scenario, scenario_payload
from .sim import InsertionParams, execute_plan

METRIC_SAMPLE_SEED = 424242
METRIC_SAMPLES = 10_000


def _site_key(col: int, row: int, tilt_deg: float) -> tuple:
    return (int(col), int(row), round(float(tilt_deg), 3))


@dataclass
class Session:
    id: str
    bundle: ScenarioBundle
    revision: int = 0
    spin_rate: float = 0.0
    edema_fraction: float = 0.0
    draft: dict = field(default_factory=dict)   # (col,row,tilt) -> sorted depth list
    metrics: PlanMetrics = field(default_factory=lambda: PlanMetrics(0.0, 0.0, 0))
    trial_payload: dict | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    _samples: np.ndarray | None = None

    @property
    def target(self) -> TriMesh:
        return self.bundle.phantom.prostate

    @property
    def params(self) -> DoseParams:
        return self.bundle.dose_params

    def samples(self) -> np.ndarray:
        if self._samples is None:
            self._samples = interior_samples(self.target, METRIC_SAMPLES,
                                             METRIC_SAMPLE_SEED)
        return self._samples

    def seeds(self) -> list[Seed]:
        out = []
        for (col, row, tilt), depths in sorted(self.draft.items()):
            pose = _draft_pose(col, row, tilt, max(depths))
            for d in sorted(depths):
                out.append(Seed(pose.entry + d * pose.direction,
                                self.params.seed_strength))
        return out

    def plan(self) -> Plan:
        trajectories = []
        for (col, row, tilt), depths in sorted(self.draft.items()):
            pose = _draft_pose(col, row, tilt, max(depths))
            trajectories.append(Trajectory(pose, tuple(sorted(depths, reverse=True))))
        return Plan(tuple(trajectories), self.metrics)

    def recompute_metrics(self) -> None:
        seeds = self.seeds()
        if not seeds:
            self.metrics = PlanMetrics(0.0, 0.0, 0)
            return
        doses = dose_at_many(self.samples(), seeds, self.params)
        self.metrics = PlanMetrics(float(np.percentile(doses, 10.0)),
                                   float(np.mean(doses >= self.params.prescription)),
                                   len(seeds))

    def state_hash(self) -> str:
        blob = json.dumps({
            "scenario": self.bundle.name,
            "revision": self.revision,
            "spin_rate": self.spin_rate,
            "edema_fraction": self.edema_fraction,
            "draft": {f"{k}": v for k, v in sorted(self.draft.items())},
            "metrics": [self.metrics.d90, self.metrics.v100, self.metrics.seed_count],
        }, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _draft_pose(col: int, row: int, tilt_deg: float, depth: float) -> NeedlePose:
    base = grid_target(col, row)
    t = np.deg2rad(tilt_deg)
    direction = np.array([0.0, np.cos(t), np.sin(t)])
    return NeedlePose(base.entry, direction, depth=depth)


def _mesh_summary(mesh: TriMesh | None) -> dict | None:
    if mesh is None:
        return None
    return {"vertices": np.round(mesh.vertices, 4).tolist(),
            "faces": mesh.faces.tolist()}


def _error_response(status: int, kind: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": kind, "message": message})


def _mesh_plane_contours(mesh: TriMesh, axis: int, offset: float) -> list:
    """Closed polylines of the mesh section by the plane axis=offset,
    as (u, v) pairs in the slice's in-plane axes."""
    others = [d for d in range(3) if d != axis]
    tri = mesh.triangles
    segs = []
    for t in tri:
        side = t[:, axis] - offset
        pts = []
        for i in range(3):
            a, b = t[i], t[(i + 1) % 3]
            da, db = side[i], side[(i + 1) % 3]
            if (da > 0) != (db > 0) and abs(da - db) > 1e-12:
                w = da / (da - db)
                p = a + w * (b - a)
                pts.append([float(p[others[0]]), float(p[others[1]])])
        if len(pts) == 2:
            segs.append(pts)
    return segs


class SessionStore:
    def __init__(self):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, scenario_name: str) -> Session:
        bundle = load_scenario(scenario_name)
        session = Session(id=uuid.uuid4().hex[:12], bundle=bundle)
        with self._lock:
            self._sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            if session_id not in self._sessions:
                raise UnknownSession(f"no session '{session_id}'")
            return self._sessions[session_id]


def _apply_mutation(session: Session, op: str, body: dict) -> None:
    draft = session.draft
    params = body

    def site(prefix: str = "") -> tuple:
        return _site_key(params[prefix + "col"], params[prefix + "row"],
                         params.get(prefix + "tilt_deg", 0.0))

    def check_spacing(depths: list, new_depth: float) -> None:
        for d in depths:
            if abs(d - new_depth) < 5.0 - 1e-9:
                raise ValueError(f"seed at {new_depth:.1f} mm violates the "
                                 f"5 mm along-needle spacing")

    def check_trajectory(col, row, tilt_deg, depth) -> None:
        pose = _draft_pose(col, row, tilt_deg, depth)
        if not workspace_contains(pose):
            raise ValueError("trajectory outside the robot workspace")
        if session.bundle.arch is not None and depth > 0:
            traj = Trajectory(pose, (depth,))
            conflict, clearance = check_arch_conflict(
                traj, session.bundle.arch, PlanConstraints().margin)
            if conflict:
                raise ValueError(f"trajectory conflicts with the pubic arch "
                                 f"(clearance {clearance:.2f} mm)")

    if op == "add_seed":
        key = site()
        depth = float(params["depth"])
        check_trajectory(key[0], key[1], key[2], depth)
        depths = draft.get(key, [])
        check_spacing(depths, depth)
        draft[key] = sorted(depths + [depth])
    elif op == "delete_seed":
        key = site()
        depth = float(params["depth"])
        depths = [d for d in draft.get(key, []) if abs(d - depth) > 1e-9]
        if len(depths) == len(draft.get(key, [])):
            raise ValueError("no seed at that site")
        if depths:
            draft[key] = depths
        else:
            draft.pop(key, None)
    elif op == "move_seed":
        _apply_mutation(session, "delete_seed", {
            "col": params["col"], "row": params["row"],
            "tilt_deg": params.get("tilt_deg", 0.0), "depth": params["depth"]})
        _apply_mutation(session, "add_seed", {
            "col": params.get("to_col", params["col"]),
            "row": params.get("to_row", params["row"]),
            "tilt_deg": params.get("to_tilt_deg", params.get("tilt_deg", 0.0)),
            "depth": params.get("to_depth", params["depth"])})
        return
    elif op == "set_tilt":
        key = site()
        if key not in draft:
            raise ValueError("no trajectory at that site")
        new_key = _site_key(key[0], key[1], params["new_tilt_deg"])
        if new_key in draft and new_key != key:
            raise ValueError("a trajectory already exists at the new tilt")
        for depth in draft[key]:
            check_trajectory(new_key[0], new_key[1], new_key[2], depth)
        draft[new_key] = draft.pop(key)
    elif op == "set_spin":
        spin = float(params["spin_rate"])
        if spin < 0:
            raise ValueError("spin_rate must be >= 0")
        session.spin_rate = spin
    elif op == "apply_edema":
        from .sim import apply_edema

        fraction = float(params["fraction"])
        base = load_scenario(session.bundle.name)
        phantom = apply_edema(base.phantom, fraction)
        session.bundle = replace(base, phantom=phantom, target=phantom.prostate)
        session.edema_fraction = fraction
        session._samples = None
    else:
        raise ValueError(f"unknown mutation op '{op}'")


def create_app(frontend_dir: str | Path | None = "auto") -> FastAPI:
    app = FastAPI(title="prosper planning service")
    store = SessionStore()
    app.state.store = store
    cfg_hash = config_hash(defaults())

    @app.exception_handler(UnknownSession)
    async def _unknown_session(_req, exc):
        return _error_response(404, "UnknownSession", str(exc))

    @app.exception_handler(RevisionConflict)
    async def _revision_conflict(_req, exc):
        return _error_response(409, "RevisionConflict", str(exc))

    @app.exception_handler(UnknownScenario)
    async def _unknown_scenario(_req, exc):
        return _error_response(404, "UnknownScenario", str(exc))

    @app.exception_handler(InfeasibleNoTrajectories)
    async def _infeasible(_req, exc):
        return _error_response(422, "InfeasibleNoTrajectories", str(exc))

    @app.exception_handler(TargetOutsideWorkspace)
    async def _outside(_req, exc):
        return _error_response(422, "TargetOutsideWorkspace", str(exc))

    def _check_revision(session: Session, body: dict) -> None:
        base = body.get("revision")
        if base is None or int(base) != session.revision:
            raise RevisionConflict(
                f"request against revision {base}, session at {session.revision}")

    def _state(session: Session, include_meshes: bool) -> dict:
        lo, hi = session.target.bounds()
        state = {
            "session_id": session.id,
            "scenario": session.bundle.name,
            "revision": session.revision,
            "spin_rate": session.spin_rate,
            "edema_fraction": session.edema_fraction,
            "draft": {
                "trajectories": [
                    {"col": k[0], "row": k[1], "tilt_deg": k[2],
                     "depths": list(v)}
                    for k, v in sorted(session.draft.items())],
                "seeds": [{"position": s.position.tolist(),
                           "strength": s.strength} for s in session.seeds()],
            },
            "metrics": {"d90": session.metrics.d90, "v100": session.metrics.v100,
                        "seed_count": session.metrics.seed_count},
            "prescription": session.params.prescription,
            "bounds": {"lo": lo.tolist(), "hi": hi.tolist()},
            "grid": {"pitch": session.bundle.robot.grid_pitch,
                     "half_index": session.bundle.robot.grid_half_index},
            "has_trial": session.trial_payload is not None,
            "state_hash": session.state_hash(),
        }
        if include_meshes:
            state["meshes"] = {"target": _mesh_summary(session.target),
                               "arch": _mesh_summary(session.bundle.arch)}
        return state

    @app.get("/scenarios")
    def scenarios_index():
        from .scenarios import SCENARIO_NAMES

        return {"scenarios": list(SCENARIO_NAMES)}

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await request.json()
        session = store.create(body.get("scenario", "reference"))
        with session.lock:
            return _state(session, include_meshes=False)

    @app.get("/sessions/{session_id}/state")
    def get_state(session_id: str, meshes: bool = True):
        session = store.get(session_id)
        with session.lock:
            return _state(session, include_meshes=meshes)

    @app.post("/sessions/{session_id}/mutate")
    async def mutate(session_id: str, request: Request):
        session = store.get(session_id)
        body = await request.json()
        with session.lock:
            _check_revision(session, body)
            try:
                _apply_mutation(session, body.get("op", ""), body)
            except ValueError as exc:
                return _error_response(422, "InvalidMutation", str(exc))
            session.recompute_metrics()
            session.revision += 1
            return _state(session, include_meshes=False)

    @app.get("/sessions/{session_id}/dose-slice")
    def get_dose_slice(session_id: str, axis: str = "z", offset_mm: float = 0.0,
                       resolution: int = 64):
        session = store.get(session_id)
        with session.lock:
            lo, hi = session.target.bounds()
            pad = 10.0
            grid = dose_slice(session.seeds(), session.params, axis, offset_mm,
                              lo - pad, hi + pad, resolution)
            grid["prescription"] = session.params.prescription
            grid["revision"] = session.revision
            axis_index = {"x": 0, "y": 1, "z": 2}[axis]
            grid["target_contour"] = _mesh_plane_contours(
                session.target, axis_index, offset_mm)
            if session.bundle.arch is not None:
                grid["arch_contour"] = _mesh_plane_contours(
                    session.bundle.arch, axis_index, offset_mm)
            else:
                grid["arch_contour"] = []
            return grid

    @app.post("/sessions/{session_id}/optimize")
    async def optimize(session_id: str, request: Request):
        session = store.get(session_id)
        body = await request.json()
        with session.lock:
            _check_revision(session, body)
            mode = body.get("mode", "grid")
            plan = plan_seeds(session.target, session.bundle.arch, session.params,
                              mode=mode, rng_seed=int(body.get("seed", 0)))
            session.draft = {}
            for traj in plan.trajectories:
                col = int(round(traj.pose.entry[0] / session.bundle.robot.grid_pitch))
                row = int(round(traj.pose.entry[2] / session.bundle.robot.grid_pitch))
                tilt = float(np.degrees(np.arcsin(traj.pose.direction[2])))
                session.draft[_site_key(col, row, tilt)] = sorted(traj.seed_depths)
            session.recompute_metrics()
            session.revision += 1
            return _state(session, include_meshes=False)

    @app.post("/sessions/{session_id}/execute")
    async def execute(session_id: str, request: Request):
        session = store.get(session_id)
        body = await request.json()
        with session.lock:
            _check_revision(session, body)
            plan = session.plan()
            params = InsertionParams(spin_rate=session.spin_rate)
            trial = execute_plan(plan, session.bundle.phantom, params)
            session.trial_payload = docio.trial_payload(trial)
            session.revision += 1
            events = list(trial.events)
            payload = session.trial_payload
            revision = session.revision

        def stream():
            for event in events:
                yield f"event: step\ndata: {json.dumps(event)}\n\n"
            final = {"revision": revision, "trial": payload}
            yield f"event: result\ndata: {json.dumps(final)}\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str):
        session = store.get(session_id)
        with session.lock:
            plan = session.plan()
            documents = {
                "scenario": docio.to_json(docio.make_document(
                    "scenario", scenario_payload(session.bundle), cfg_hash)),
                "plan": docio.to_json(docio.make_document(
                    "plan", docio.plan_payload(plan, session.params, mode="console"),
                    cfg_hash)),
            }
            if session.trial_payload is not None:
                documents["trial"] = docio.to_json(docio.make_document(
                    "trial", session.trial_payload, cfg_hash))
            return {"revision": session.revision,
                    "state_hash": session.state_hash(),
                    "documents": {k: json.loads(v) for k, v in documents.items()}}

    if frontend_dir == "auto":
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        frontend_dir = candidate if candidate.is_dir() else None
    if frontend_dir is not None and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True),
                  name="console")

    return app
