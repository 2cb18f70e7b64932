"""Acceptance gate: every primary criterion at its stated tolerance.

Each test prints one PASS line on success (run with -s to see them inline);
a pytest failure on any test is the corresponding FAIL line.
"""

import time

import numpy as np
import pytest

from prosper import calib, geom, io as docio, scenarios
from prosper.dose import PlanConstraints, check_arch_conflict, plan_seeds
from prosper.errors import InfeasibleNoTrajectories
from prosper.geom import RigidTransform, SimilarityTransform, farthest_point_sample
from prosper.register import RegistrationParams, elastic_register
from prosper.robot import (
    NeedlePose,
    forward_kinematics,
    grid_target,
    inverse_kinematics,
    workspace_contains,
)
from prosper.shape import ShapeCoefficients, fit_to_points, synthesize
from prosper.sim import InsertionParams, apply_edema, execute_plan

from test_geom import _clearance_oracle, _mc_volume_oracle


def _report(name: str) -> None:
    print(f"[ACCEPTANCE] {name}: PASS")


def test_calibration_accuracy():
    t0 = time.perf_counter()
    true = RigidTransform.random(np.random.default_rng(1), max_translation=60.0)
    obs = calib.simulate_water_phantom(true, calib.calibration_configs(8),
                                       noise_sigma=0.2, rng_seed=2)
    result = calib.solve_calibration(obs)
    worst = calib.workspace_prediction_error(true, result.us_from_robot, grid_n=20)
    elapsed = time.perf_counter() - t0
    assert worst < 1.0, f"worst workspace error {worst:.4f} mm"
    assert elapsed < 1.0, f"calibration took {elapsed:.2f} s"
    _report(f"calibration accuracy ({worst:.3f} mm < 1 mm in {elapsed:.2f} s)")


def test_placement_accuracy(reference_bundle, reference_plan):
    t0 = time.perf_counter()
    trial = execute_plan(reference_plan, reference_bundle.phantom,
                         InsertionParams(spin_rate=60.0))
    elapsed = time.perf_counter() - t0
    assert trial.mean_error < 2.0, f"mean seed error {trial.mean_error:.3f} mm"
    assert elapsed < 10.0, f"simulated run took {elapsed:.2f} s"
    _report(f"placement accuracy ({trial.mean_error:.3f} mm < 2 mm in {elapsed:.1f} s)")


def test_rotation_benefit(reference_bundle, reference_plan):
    means, peaks = [], []
    for spin in (0.0, 10.0, 30.0, 60.0):
        trial = execute_plan(reference_plan, reference_bundle.phantom,
                             InsertionParams(spin_rate=spin))
        means.append(trial.mean_error)
        peaks.append(trial.peak_prostate_displacement)
    assert means[-1] < means[0], "no mean-error benefit"
    assert peaks[-1] < peaks[0], "no displacement benefit"
    assert np.all(np.diff(means) < 0), f"means not monotone: {means}"
    assert np.all(np.diff(peaks) < 0), f"peaks not monotone: {peaks}"
    _report(f"rotation benefit (mean {means[0]:.2f} -> {means[-1]:.2f} mm, "
            f"peak {peaks[0]:.2f} -> {peaks[-1]:.2f} mm, monotone)")


def test_edema_handling(reference_bundle):
    swollen = apply_edema(reference_bundle.phantom, 0.2)
    ratio = geom.mesh_volume(swollen.prostate) / geom.mesh_volume(
        reference_bundle.phantom.prostate)
    assert ratio == pytest.approx(1.2, abs=1e-9), f"volume ratio {ratio}"
    replan = plan_seeds(swollen.prostate, reference_bundle.arch,
                        reference_bundle.dose_params, mode="grid", rng_seed=3)
    assert replan.metrics.v100 >= 0.95, f"replanned v100 {replan.metrics.v100:.3f}"
    _report(f"edema handling (ratio {ratio:.12f}, replanned v100 "
            f"{replan.metrics.v100:.3f})")


def test_pubic_arch_rerouting():
    bundle = scenarios.load_scenario("large_prostate")
    with pytest.raises(InfeasibleNoTrajectories):
        plan_seeds(bundle.target, bundle.arch, bundle.dose_params,
                   mode="grid", rng_seed=1)
    plan = plan_seeds(bundle.target, bundle.arch, bundle.dose_params,
                      mode="oblique", rng_seed=1)
    assert plan.metrics.seed_count > 0
    margin = PlanConstraints().margin
    clearances = []
    for traj in plan.trajectories:
        conflict, clearance = check_arch_conflict(traj, bundle.arch, margin)
        assert not conflict
        assert clearance >= margin
        clearances.append(clearance)
    _report(f"pubic-arch rerouting (grid infeasible, oblique {len(plan.trajectories)} "
            f"needles, min clearance {min(clearances):.2f} mm)")


def test_kinematics():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(10_000):
        pose = NeedlePose(
            entry=np.array([rng.uniform(-40, 40), 0.0, rng.uniform(-40, 40)]),
            direction=np.array([rng.uniform(-0.3, 0.3), 1.0, rng.uniform(-0.3, 0.3)]),
            depth=rng.uniform(0.0, 150.0))
        again = forward_kinematics(inverse_kinematics(pose))
        worst = max(worst, float(np.linalg.norm(again.entry - pose.entry)),
                    float(np.linalg.norm(again.tip - pose.tip)))
    assert worst < 1e-6, f"roundtrip error {worst:.2e} mm"

    holes = 0
    for col in range(-6, 7):
        for row in range(-6, 7):
            pose = grid_target(col, row)
            assert workspace_contains(pose)
            holes += 1
            if col < 6:
                step = np.linalg.norm(grid_target(col + 1, row).entry - pose.entry)
                assert abs(step - 5.0) < 1e-12
            if row < 6:
                step = np.linalg.norm(grid_target(col, row + 1).entry - pose.entry)
                assert abs(step - 5.0) < 1e-12
    assert holes == 169
    _report(f"kinematics (roundtrip {worst:.1e} mm, 169 holes reachable, "
            f"5 mm lattice exact)")


def test_registration_recovery():
    from prosper.shape import synthetic_training_family

    source = synthetic_training_family(count=1, seed=5)[0]
    v = source.vertices
    disp = np.column_stack([1.5 * np.sin(v[:, 2] / 12.0),
                            1.2 * np.cos(v[:, 0] / 15.0),
                            -1.0 * np.sin(v[:, 1] / 14.0)])
    target = geom.TriMesh(v + disp, source.faces)
    vol_change = abs(geom.mesh_volume(target) / geom.mesh_volume(source) - 1.0)
    assert vol_change <= 0.05
    res = elastic_register(source, target)
    assert res.surface_rms < 0.5, f"surface rms {res.surface_rms:.3f} mm"
    assert abs(res.volume_error) < 0.02, f"volume error {res.volume_error:.4f}"

    sphere = geom.icosphere(20.0, 3)
    sv = sphere.vertices
    bumpy = geom.TriMesh(sv * 0.90 + 1.2 * np.column_stack([
        np.sin(sv[:, 2] / 7.0), np.cos(sv[:, 0] / 8.0), np.sin(sv[:, 1] / 6.0)]),
        sphere.faces)
    errs = [abs(elastic_register(
        sphere, bumpy, RegistrationParams(lambda_bend=5.0, lambda_vol=lam,
                                          n_control=60)).volume_error)
            for lam in (0.0, 1.0, 10.0)]
    assert errs[0] >= errs[1] - 1e-12 and errs[1] >= errs[2] - 1e-12, errs
    _report(f"registration recovery (rms {res.surface_rms:.3f} mm, "
            f"|vol err| {abs(res.volume_error) * 100:.2f} %, "
            f"lambda_vol monotone {['%.4f' % e for e in errs]})")


def test_shape_fitting(shape_model):
    landmarks = farthest_point_sample(shape_model.mean_vertices, 12)

    mean_fit = fit_to_points(shape_model, shape_model.mean_vertices[landmarks])
    assert np.linalg.norm(mean_fit.coeffs.b) < 1e-3, \
        f"|b| {np.linalg.norm(mean_fit.coeffs.b):.2e}"

    rng = np.random.default_rng(3)
    b_true = rng.normal(size=shape_model.n_modes) * np.sqrt(shape_model.variances) * 0.5
    pose = SimilarityTransform(1.07, RigidTransform.from_axis_angle(
        [0.3, 1.0, 0.2], 0.4, [5.0, 60.0, -4.0]))
    instance = synthesize(shape_model, ShapeCoefficients(b_true), pose)
    fit = fit_to_points(shape_model, instance.vertices[landmarks])
    fitted = synthesize(shape_model, fit.coeffs, fit.pose)
    _, dist, _ = geom.closest_point_on_mesh(fitted.vertices, instance)
    surf_rms = float(np.sqrt(np.mean(dist ** 2)))
    assert surf_rms < 0.5, f"surface rms {surf_rms:.3f} mm"
    _report(f"shape fitting (surface rms {surf_rms:.3f} mm, mean-fit |b| "
            f"{np.linalg.norm(mean_fit.coeffs.b):.1e})")


def test_determinism_and_oracles(tmp_path):
    # CLI pipeline vs service execute: identical trial results
    import json

    from fastapi.testclient import TestClient

    from prosper.cli import run
    from prosper.service import create_app

    assert run(["scenario", "reference", "--out", str(tmp_path)]) == 0
    scenario = tmp_path / "reference.prosper.json"
    plan_path = tmp_path / "plan.prosper.json"
    trial_path = tmp_path / "trial.prosper.json"
    assert run(["plan", "--scenario", str(scenario), "--mode", "grid",
                "--seed", "11", "--out", str(plan_path)]) == 0
    assert run(["simulate", "--plan", str(plan_path), "--scenario", str(scenario),
                "--spin", "60", "--out", str(trial_path)]) == 0
    cli_trial = docio.load_document(trial_path).payload

    client = TestClient(create_app(frontend_dir=None))
    sid = client.post("/sessions", json={"scenario": "reference"}).json()["session_id"]
    rev = client.post(f"/sessions/{sid}/mutate",
                      json={"revision": 0, "op": "set_spin",
                            "spin_rate": 60.0}).json()["revision"]
    rev = client.post(f"/sessions/{sid}/optimize",
                      json={"revision": rev, "mode": "grid",
                            "seed": 11}).json()["revision"]
    stream = client.post(f"/sessions/{sid}/execute", json={"revision": rev})
    final = stream.text.strip().split("\n\n")[-1]
    service_trial = json.loads(final.split("\ndata: ", 1)[1])["trial"]
    assert service_trial["per_seed_error"] == cli_trial["per_seed_error"]
    assert service_trial["events"] == cli_trial["events"]

    # geometry clearance against the brute-force oracle
    mesh = geom.icosphere(10.0, 2)
    rng = np.random.default_rng(12)
    checked = 0
    for _ in range(200):
        a, b = rng.uniform(-25.0, 25.0, (2, 3))
        d, hit = geom.segment_mesh_clearance(a, b, mesh)
        d_ref, hit_ref = _clearance_oracle(a, b, mesh)
        assert hit == hit_ref
        assert d == pytest.approx(d_ref, abs=1e-9)
        checked += 1
    assert checked == 200

    # mesh volume against the Monte-Carlo oracle
    ico = geom.icosphere(10.0, 4)
    analytic = geom.mesh_volume(ico)
    mc = _mc_volume_oracle(ico)
    assert analytic == pytest.approx(mc, rel=0.01)
    _report(f"determinism & oracles (CLI == service, 200 clearance checks, "
            f"volume MC gap {abs(analytic - mc) / mc * 100:.2f} %)")
