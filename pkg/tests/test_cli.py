import json
from pathlib import Path

import pytest

from prosper import io as docio
from prosper.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, run


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def scenario_file(workdir):
    assert run(["scenario", "reference", "--out", str(workdir)]) == EXIT_OK
    return workdir / "reference.prosper.json"


@pytest.fixture(scope="module")
def plan_file(workdir, scenario_file):
    out = workdir / "plan.prosper.json"
    code = run(["plan", "--scenario", str(scenario_file), "--mode", "grid",
                "--seed", "2026", "--out", str(out)])
    assert code == EXIT_OK
    return out


@pytest.fixture(scope="module")
def trial_file(workdir, scenario_file, plan_file):
    out = workdir / "trial.prosper.json"
    code = run(["simulate", "--plan", str(plan_file), "--scenario",
                str(scenario_file), "--spin", "60", "--out", str(out)])
    assert code == EXIT_OK
    return out


def test_usage_error_exit_code():
    assert run(["--bogus-flag"]) == EXIT_USAGE
    assert run(["plan", "--unknown-option", "x"]) == EXIT_USAGE
    assert run([]) == EXIT_USAGE


def test_unknown_scenario_is_validation_error(workdir):
    assert run(["scenario", "marsbase", "--out", str(workdir)]) == EXIT_VALIDATION


def test_pipeline_end_to_end(workdir, scenario_file, plan_file, trial_file, capsys):
    code = run(["report", "--plan", str(plan_file), "--trial", str(trial_file),
                "--format", "machine", "--out", str(workdir / "report.json")])
    assert code == EXIT_OK
    summary = json.loads((workdir / "report.json").read_text())
    assert summary["trial"]["mean_error_mm"] < 2.0
    assert summary["plan"]["v100"] >= 0.95
    assert "config_hash" in summary


def test_written_documents_validate(scenario_file, plan_file, trial_file):
    for path in (scenario_file, plan_file, trial_file):
        doc = docio.load_document(path)
        assert docio.validate(doc) == [], path


def test_validate_command(scenario_file, plan_file, workdir):
    assert run(["validate", str(scenario_file), str(plan_file)]) == EXIT_OK
    bad = workdir / "bad.prosper.json"
    bad.write_text(json.dumps({"version": "1.0.0", "kind": "mesh",
                               "payload": {"vertices": [[0, 0, 0]], "faces": []}}))
    assert run(["validate", str(bad)]) == EXIT_VALIDATION


def test_calibrate_below_1mm(workdir, capsys):
    out = workdir / "cal.prosper.json"
    code = run(["calibrate", "--n", "8", "--noise", "0.2", "--seed", "1",
                "--out", str(out)])
    assert code == EXIT_OK
    doc = docio.load_document(out)
    assert doc.payload["solver"]["workspace_error_mm"] < 1.0
    assert docio.validate(doc) == []


def test_calibrate_deterministic(workdir):
    a = workdir / "cal_a.prosper.json"
    b = workdir / "cal_b.prosper.json"
    run(["calibrate", "--n", "8", "--noise", "0.2", "--seed", "9", "--out", str(a)])
    run(["calibrate", "--n", "8", "--noise", "0.2", "--seed", "9", "--out", str(b)])
    pa = docio.load_document(a).payload
    pb = docio.load_document(b).payload
    assert pa == pb


def test_plan_infeasible_exit_code(workdir):
    assert run(["scenario", "large_prostate", "--out", str(workdir)]) == EXIT_OK
    scenario = workdir / "large_prostate.prosper.json"
    code = run(["plan", "--scenario", str(scenario), "--mode", "grid",
                "--out", str(workdir / "nope.prosper.json")])
    assert code == EXIT_INFEASIBLE
    code = run(["plan", "--scenario", str(scenario), "--mode", "oblique",
                "--seed", "1", "--out", str(workdir / "oblique.prosper.json")])
    assert code == EXIT_OK


def test_register_command(workdir):
    from prosper import geom
    from prosper.shape import synthetic_training_family

    src = synthetic_training_family(count=1, seed=5)[0]
    import numpy as np
    v = src.vertices
    disp = np.column_stack([np.sin(v[:, 2] / 12.0), np.cos(v[:, 0] / 15.0),
                            -np.sin(v[:, 1] / 14.0)])
    tgt = geom.TriMesh(v + disp, src.faces)
    src_path = workdir / "mri.mesh.prosper.json"
    tgt_path = workdir / "us.mesh.prosper.json"
    docio.save_document(docio.make_document("mesh", docio.mesh_payload(src)), src_path)
    docio.save_document(docio.make_document("mesh", docio.mesh_payload(tgt)), tgt_path)
    out = workdir / "field.prosper.json"
    code = run(["register", "--source", str(src_path), "--target", str(tgt_path),
                "--out", str(out)])
    assert code == EXIT_OK
    doc = docio.load_document(out)
    assert doc.payload["diagnostics"]["surface_rms"] < 0.5
    assert docio.validate(doc) == []


def test_fit_shape_command(workdir, shape_model):
    from prosper.geom import farthest_point_sample

    idx = farthest_point_sample(shape_model.mean_vertices, 12)
    pts = shape_model.mean_vertices[idx]
    pts_path = workdir / "points.json"
    pts_path.write_text(json.dumps(pts.tolist()))
    out = workdir / "fitted.prosper.json"
    code = run(["fit-shape", "--points", str(pts_path), "--out", str(out)])
    assert code == EXIT_OK
    doc = docio.load_document(out)
    assert doc.kind == "mesh"
    assert docio.validate(doc) == []


def test_report_human_format(workdir, plan_file, trial_file, capsys):
    code = run(["report", "--plan", str(plan_file), "--trial", str(trial_file)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "mean seed error" in out
    assert "v100" in out


def test_config_override_changes_hash(workdir, scenario_file):
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"plan": {"max_seeds": 5}}))
    out = workdir / "plan5.prosper.json"
    code = run(["--config", str(cfg), "plan", "--scenario", str(scenario_file),
                "--mode", "grid", "--out", str(out)])
    assert code == EXIT_OK
    doc = docio.load_document(out)
    assert doc.payload["metrics"]["seed_count"] <= 5
    base = docio.load_document(workdir / "plan.prosper.json")
    assert doc.provenance["config_hash"] != base.provenance["config_hash"]
