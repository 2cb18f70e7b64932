import numpy as np
import pytest

from prosper import calib
from prosper.calib import (
    CalibrationObservation,
    calibration_configs,
    simulate_water_phantom,
    solve_calibration,
    predict_tip_us,
    workspace_prediction_error,
)
from prosper.errors import DegenerateGeometry, TooFewPoints
from prosper.geom import RigidTransform, quat_to_matrix
from prosper.robot import JointConfig, forward_kinematics


def test_identity_when_frames_match():
    configs = calibration_configs(8)
    obs = [CalibrationObservation(q, forward_kinematics(q).tip) for q in configs]
    result = solve_calibration(obs)
    assert result.rms_residual < 1e-9
    assert np.allclose(quat_to_matrix(result.us_from_robot.rotation), np.eye(3), atol=1e-10)
    assert np.allclose(result.us_from_robot.translation, 0.0, atol=1e-9)


def test_synthesis_recovery_noiseless():
    rng = np.random.default_rng(5)
    for _ in range(10):
        true = RigidTransform.random(rng, max_translation=80.0)
        obs = simulate_water_phantom(true, calibration_configs(8), noise_sigma=0.0)
        result = solve_calibration(obs)
        t = result.us_from_robot
        assert np.linalg.norm(t.translation - true.translation) < 1e-9
        r_err = quat_to_matrix(t.rotation) @ quat_to_matrix(true.rotation).T
        angle = np.arccos(np.clip((np.trace(r_err) - 1) / 2, -1, 1))
        assert angle < 1e-12 or angle < 1e-9  # numerically zero rotation error


def test_too_few_points():
    configs = calibration_configs(8)[:2]
    obs = [CalibrationObservation(q, forward_kinematics(q).tip) for q in configs]
    with pytest.raises(TooFewPoints):
        solve_calibration(obs)


def test_collinear_tips_rejected():
    configs = [JointConfig(depth=d) for d in (20.0, 60.0, 100.0, 140.0)]
    obs = [CalibrationObservation(q, forward_kinematics(q).tip) for q in configs]
    with pytest.raises(DegenerateGeometry):
        solve_calibration(obs)


def test_rotation_always_proper_under_noise():
    rng = np.random.default_rng(21)
    for seed in range(20):
        true = RigidTransform.random(rng, max_translation=50.0)
        obs = simulate_water_phantom(true, calibration_configs(8),
                                     noise_sigma=3.0, rng_seed=seed)
        result = solve_calibration(obs)
        assert np.linalg.det(quat_to_matrix(result.us_from_robot.rotation)) == \
            pytest.approx(1.0, abs=1e-9)


def test_noise_regression_rms():
    true = RigidTransform.random(np.random.default_rng(0), max_translation=60.0)
    obs = simulate_water_phantom(true, calibration_configs(8),
                                 noise_sigma=0.2, rng_seed=7)
    result = solve_calibration(obs)
    assert result.rms_residual <= 0.5
    # frozen regression value for these exact inputs
    assert result.rms_residual == pytest.approx(0.2600429541766249, abs=1e-9)


def test_determinism_of_simulated_observations():
    true = RigidTransform.random(np.random.default_rng(3), max_translation=60.0)
    a = simulate_water_phantom(true, calibration_configs(8), 0.2, rng_seed=11)
    b = simulate_water_phantom(true, calibration_configs(8), 0.2, rng_seed=11)
    for oa, ob in zip(a, b):
        assert np.array_equal(oa.tip_us, ob.tip_us)


def test_predict_tip_identity_and_translation():
    q = JointConfig(x=10.0, y=-5.0, depth=80.0)
    identity = solve_calibration(
        [CalibrationObservation(c, forward_kinematics(c).tip)
         for c in calibration_configs(8)])
    assert np.allclose(predict_tip_us(q, identity), forward_kinematics(q).tip, atol=1e-9)

    t = np.array([4.0, -2.0, 9.0])
    shifted = [CalibrationObservation(c, forward_kinematics(c).tip + t)
               for c in calibration_configs(8)]
    result = solve_calibration(shifted)
    assert np.allclose(predict_tip_us(q, result),
                       forward_kinematics(q).tip + t, atol=1e-9)


def test_predict_tip_roundtrip_within_residual():
    rng = np.random.default_rng(13)
    true = RigidTransform.random(rng, max_translation=60.0)
    obs = simulate_water_phantom(true, calibration_configs(10),
                                 noise_sigma=0.2, rng_seed=3)
    result = solve_calibration(obs)
    q = JointConfig(x=25.0, y=-30.0, depth=120.0)
    err = np.linalg.norm(predict_tip_us(q, result)
                         - true.apply(forward_kinematics(q).tip))
    assert err < 1.0  # bounded by solver residual scale


def test_workspace_error_below_1mm():
    # mirrors the acceptance criterion at its stated settings
    true = RigidTransform.random(np.random.default_rng(1), max_translation=60.0)
    obs = simulate_water_phantom(true, calibration_configs(8),
                                 noise_sigma=0.2, rng_seed=2)
    result = solve_calibration(obs)
    assert workspace_prediction_error(true, result.us_from_robot) < 1.0


def test_solve_equivariance_under_us_frame_rotation():
    rng = np.random.default_rng(4)
    true = RigidTransform.random(rng, max_translation=40.0)
    obs = simulate_water_phantom(true, calibration_configs(8),
                                 noise_sigma=0.3, rng_seed=9)
    base = solve_calibration(obs)

    reframe = RigidTransform.random(rng, max_translation=30.0)
    moved = [CalibrationObservation(o.config, reframe.apply(o.tip_us)) for o in obs]
    rotated = solve_calibration(moved)
    assert np.allclose(np.sort(rotated.per_point_residuals),
                       np.sort(base.per_point_residuals), atol=1e-9)
    assert rotated.rms_residual == pytest.approx(base.rms_residual, abs=1e-9)


def test_calibration_configs_counts():
    assert len(calibration_configs(8)) == 8
    assert len(calibration_configs(13)) == 13
    assert len(calibration_configs(30)) == 30
    with pytest.raises(TooFewPoints):
        calibration_configs(2)
