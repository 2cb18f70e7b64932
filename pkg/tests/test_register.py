import numpy as np
import pytest

from prosper import geom
from prosper.errors import NonClosedMesh, VolumeRatioOutOfRange
from prosper.geom import RigidTransform, TriMesh, umeyama
from prosper.register import (
    DeformationField,
    RegistrationParams,
    apply_field,
    elastic_register,
    map_points,
    tps_interpolate,
)
from prosper.shape import synthetic_training_family


@pytest.fixture(scope="module")
def bumpy_source():
    return synthetic_training_family(count=1, seed=5)[0]


# ---------------------------------------------------------------------------
# field evaluation
# ---------------------------------------------------------------------------

def test_identity_field():
    fld = DeformationField.identity()
    p = np.array([3.0, -7.0, 11.0])
    assert np.allclose(apply_field(fld, p), p)


def test_pure_affine_translation():
    affine = np.hstack([np.eye(3), np.array([[2.0], [-1.0], [5.0]])])
    fld = DeformationField(np.zeros((0, 3)), np.zeros((0, 3)), affine)
    p = np.array([1.0, 2.0, 3.0])
    assert np.allclose(apply_field(fld, p), p + [2.0, -1.0, 5.0])


def test_interpolation_at_control_points(rng):
    c = rng.uniform(-20.0, 20.0, size=(40, 3))
    d = rng.normal(0.0, 2.0, size=(40, 3))
    fld = tps_interpolate(c, d)
    assert np.abs(apply_field(fld, c) - (c + d)).max() < 1e-6


def test_map_points_empty_and_batch(rng):
    fld = tps_interpolate(rng.uniform(-10, 10, (10, 3)), rng.normal(0, 1, (10, 3)))
    assert map_points(fld, []).shape == (0, 3)
    single = map_points(fld, [[1.0, 2.0, 3.0]])
    assert np.allclose(single[0], apply_field(fld, np.array([1.0, 2.0, 3.0])))
    pts = rng.uniform(-15, 15, size=(100, 3))
    batch = map_points(fld, pts)
    for i in range(len(pts)):
        assert np.allclose(batch[i], apply_field(fld, pts[i]), atol=1e-12)


# ---------------------------------------------------------------------------
# elastic_register
# ---------------------------------------------------------------------------

def test_register_identity(bumpy_source):
    res = elastic_register(bumpy_source, bumpy_source)
    assert res.surface_rms < 1e-3
    assert abs(res.volume_error) < 1e-4
    moved = apply_field(res.field, bumpy_source.vertices)
    assert np.abs(moved - bumpy_source.vertices).max() < 1e-3


def test_register_rigid_displacement_recovers_rigid(bumpy_source):
    t = RigidTransform.from_axis_angle([0.2, 1.0, 0.1], 0.3, [8.0, -5.0, 12.0])
    target = bumpy_source.transformed(t)
    res = elastic_register(bumpy_source, target, RegistrationParams(lambda_vol=0.0))
    moved = apply_field(res.field, bumpy_source.vertices)
    # the recovered field is a rigid motion at every vertex
    _, rot, trans = umeyama(bumpy_source.vertices, moved, with_scale=False)
    assert np.abs(bumpy_source.vertices @ rot.T + trans - moved).max() < 1e-3
    # and for this asymmetric shape it is the displacement itself
    assert np.abs(moved - t.apply(bumpy_source.vertices)).max() < 1e-3


@pytest.fixture(scope="module")
def smooth_pair(bumpy_source):
    v = bumpy_source.vertices
    disp = np.column_stack([
        1.5 * np.sin(v[:, 2] / 12.0),
        1.2 * np.cos(v[:, 0] / 15.0),
        -1.0 * np.sin(v[:, 1] / 14.0),
    ])
    target = TriMesh(v + disp, bumpy_source.faces)
    return bumpy_source, target


def test_register_synthetic_recovery(smooth_pair):
    source, target = smooth_pair
    ratio = geom.mesh_volume(target) / geom.mesh_volume(source)
    assert abs(ratio - 1.0) <= 0.05
    res = elastic_register(source, target)
    assert res.surface_rms < 0.5
    assert abs(res.volume_error) < 0.02
    assert res.converged


def test_register_objective_trace_monotone(smooth_pair):
    source, target = smooth_pair
    res = elastic_register(source, target)
    trace = res.objective_trace
    assert len(trace) >= 2
    assert np.all(np.diff(trace) <= 1e-9)


def test_register_volume_ratio_guard(bumpy_source):
    big = geom.TriMesh(bumpy_source.vertices * 1.5, bumpy_source.faces)  # 3.4x volume
    with pytest.raises(VolumeRatioOutOfRange):
        elastic_register(bumpy_source, big)


def test_register_requires_closed_meshes(bumpy_source):
    broken = TriMesh(bumpy_source.vertices, bumpy_source.faces[:-1])
    with pytest.raises(NonClosedMesh):
        elastic_register(broken, bumpy_source)
    with pytest.raises(NonClosedMesh):
        elastic_register(bumpy_source, broken)


def test_lambda_vol_monotonically_tightens_volume():
    source = geom.icosphere(20.0, 3)
    v = source.vertices
    target = TriMesh(v * 0.90 + 1.2 * np.column_stack([
        np.sin(v[:, 2] / 7.0), np.cos(v[:, 0] / 8.0), np.sin(v[:, 1] / 6.0)]),
        source.faces)
    errors = []
    for lam in (0.0, 1.0, 10.0):
        params = RegistrationParams(lambda_bend=5.0, lambda_vol=lam, n_control=60)
        res = elastic_register(source, target, params)
        errors.append(abs(res.volume_error))
    assert errors[0] >= errors[1] - 1e-12
    assert errors[1] >= errors[2] - 1e-12
    assert errors[0] > errors[2]


def test_register_field_maps_interest_points(smooth_pair):
    # transferring interior points of interest stays within the deformation scale
    source, target = smooth_pair
    res = elastic_register(source, target)
    lesion = source.centroid()
    mapped = map_points(res.field, [lesion])[0]
    assert np.linalg.norm(mapped - lesion) < 3.0
