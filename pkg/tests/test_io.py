import json

import numpy as np
import pytest

from prosper import geom, io as docio, scenarios
from prosper.calib import CalibrationObservation, calibration_configs, solve_calibration
from prosper.dose import DoseParams, plan_seeds, PlanConstraints
from prosper.errors import UnknownKind, UnknownScenario, UnsupportedVersion
from prosper.robot import RobotDescription, forward_kinematics
from prosper.shape import default_shape_model


def _roundtrip(doc):
    return docio.parse_document(docio.to_json(doc))


def test_mesh_document_roundtrip(tmp_path):
    mesh = geom.icosphere(12.0, 2)
    doc = docio.make_document("mesh", docio.mesh_payload(mesh))
    path = docio.save_document(doc, tmp_path / "m.prosper.json")
    loaded = docio.load_document(path)
    out = docio.mesh_from_payload(loaded.payload)
    assert np.array_equal(out.vertices, mesh.vertices)   # bit-exact through JSON
    assert np.array_equal(out.faces, mesh.faces)
    assert docio.validate(loaded) == []


def test_robot_document_roundtrip():
    doc = docio.make_document("robot", docio.robot_payload(RobotDescription()))
    loaded = _roundtrip(doc)
    desc = docio.robot_from_payload(loaded.payload)
    assert desc == RobotDescription()
    assert docio.validate(loaded) == []


def test_calibration_document_roundtrip():
    configs = calibration_configs(8)
    obs = [CalibrationObservation(q, forward_kinematics(q).tip) for q in configs]
    result = solve_calibration(obs)
    doc = docio.make_document("calibration", docio.calibration_payload(obs, result))
    loaded = _roundtrip(doc)
    obs2, result2 = docio.calibration_from_payload(loaded.payload)
    assert result2.rms_residual == result.rms_residual
    assert np.array_equal(obs2[3].tip_us, obs[3].tip_us)
    assert docio.validate(loaded) == []


def test_shape_model_document_roundtrip(shape_model):
    doc = docio.make_document("shape_model", docio.shape_model_payload(shape_model))
    loaded = _roundtrip(doc)
    model2 = docio.shape_model_from_payload(loaded.payload)
    assert np.array_equal(model2.mean_vertices, shape_model.mean_vertices)
    assert np.array_equal(model2.modes, shape_model.modes)
    assert docio.validate(loaded) == []


def test_plan_document_roundtrip(reference_bundle, reference_plan):
    params = reference_bundle.dose_params
    doc = docio.make_document("plan", docio.plan_payload(reference_plan, params, "grid"))
    loaded = _roundtrip(doc)
    plan2, params2 = docio.plan_from_payload(loaded.payload)
    assert params2 == params
    assert plan2.metrics == reference_plan.metrics
    assert len(plan2.trajectories) == len(reference_plan.trajectories)
    assert docio.validate(loaded) == []


def test_phantom_and_trial_roundtrip(reference_bundle, small_plan):
    from prosper.sim import InsertionParams, execute_plan

    doc = docio.make_document("phantom", docio.phantom_payload(reference_bundle.phantom))
    loaded = _roundtrip(doc)
    ph2 = docio.phantom_from_payload(loaded.payload)
    assert np.array_equal(ph2.prostate.vertices, reference_bundle.phantom.prostate.vertices)
    assert docio.validate(loaded) == []

    trial = execute_plan(small_plan, reference_bundle.phantom, InsertionParams(spin_rate=60.0))
    tdoc = docio.make_document("trial", docio.trial_payload(trial))
    t2 = docio.trial_from_payload(_roundtrip(tdoc).payload)
    assert np.array_equal(t2.per_seed_error, trial.per_seed_error)
    assert t2.events == trial.events
    assert docio.validate(_roundtrip(tdoc)) == []


def test_validate_flags_open_mesh():
    mesh = geom.icosphere(10.0, 2)
    payload = docio.mesh_payload(geom.TriMesh(mesh.vertices, mesh.faces[:-1]))
    doc = docio.make_document("mesh", payload)
    violations = docio.validate(doc)
    assert violations
    assert any("OpenMesh" in v for v in violations)


def test_validate_flags_kind_payload_mismatch():
    mesh = geom.icosphere(10.0, 2)
    doc = docio.make_document("plan", docio.mesh_payload(mesh))
    assert docio.validate(doc)   # schema violations, not an exception


def test_unknown_kind_rejected():
    with pytest.raises(UnknownKind):
        docio.make_document("voxels", {})
    with pytest.raises(UnknownKind):
        docio.parse_document(json.dumps({"version": "1.0.0", "kind": "voxels",
                                         "payload": {}}))


def test_unsupported_version_rejected():
    with pytest.raises(UnsupportedVersion):
        docio.parse_document(json.dumps({"version": "2.0.0", "kind": "mesh",
                                         "payload": {}}))


def test_ply_import(tmp_path):
    cube = geom.unit_cube()
    lines = ["ply", "format ascii 1.0",
             f"element vertex {len(cube.vertices)}",
             "property float x", "property float y", "property float z",
             f"element face {len(cube.faces)}",
             "property list uchar int vertex_indices", "end_header"]
    lines += [" ".join(f"{c:.6f}" for c in v) for v in cube.vertices]
    lines += ["3 " + " ".join(str(i) for i in f) for f in cube.faces]
    path = tmp_path / "cube.ply"
    path.write_text("\n".join(lines))
    mesh = docio.load_mesh_file(path)
    assert np.allclose(mesh.vertices, cube.vertices)
    assert np.array_equal(mesh.faces, cube.faces)
    assert geom.mesh_volume(mesh) == pytest.approx(1.0)


def test_bare_mesh_json_import(tmp_path):
    mesh = geom.icosphere(5.0, 1)
    path = tmp_path / "bare.json"
    path.write_text(json.dumps({"version": "1.0.0",
                                "vertices": mesh.vertices.tolist(),
                                "faces": mesh.faces.tolist()}))
    out = docio.load_mesh_file(path)
    assert np.array_equal(out.vertices, mesh.vertices)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def test_reference_scenario_validates(reference_bundle):
    payload = scenarios.scenario_payload(reference_bundle)
    doc = docio.make_document("scenario", payload)
    assert docio.validate(doc) == []
    bundle2 = scenarios.scenario_from_payload(_roundtrip(doc).payload)
    assert bundle2.name == "reference"
    assert np.array_equal(bundle2.target.vertices, reference_bundle.target.vertices)
    assert bundle2.dose_params == reference_bundle.dose_params


def test_all_scenarios_load_and_validate():
    for name in scenarios.SCENARIO_NAMES:
        bundle = scenarios.load_scenario(name)
        doc = docio.make_document("scenario", scenarios.scenario_payload(bundle))
        assert docio.validate(doc) == [], name


def test_unknown_scenario():
    with pytest.raises(UnknownScenario):
        scenarios.load_scenario("nonexistent")


def test_edema_scenario_volume_ratio(reference_bundle):
    edema = scenarios.load_scenario("edema")
    ratio = geom.mesh_volume(edema.target) / geom.mesh_volume(reference_bundle.target)
    assert ratio == pytest.approx(1.2, abs=1e-9)
