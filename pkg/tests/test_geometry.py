import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvskel.geometry import (CameraParams, Extrinsics, Intrinsics, PointBehindCameraError,
                             cam_to_world, distort, load_calibration, look_at, project,
                             rotation_matrix, save_calibration, undistort, world_to_cam)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)


def test_rotation_identity_and_half_turn():
    np.testing.assert_array_equal(rotation_matrix([0, 0, 0]), np.eye(3))
    np.testing.assert_allclose(rotation_matrix([0, 0, np.pi]), np.diag([-1.0, -1.0, 1.0]),
                               atol=1e-15)


@given(vec3)
def test_rotation_orthonormal(v):
    R = rotation_matrix(v)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_distort_identity_and_fixed_point():
    p = np.array([0.3, -0.2])
    np.testing.assert_array_equal(distort(p, (0, 0, 0, 0, 0)), p)
    np.testing.assert_array_equal(distort([0.0, 0.0], (0.2, -0.1, 0, 0, 0.05)), [0.0, 0.0])


def test_distort_radial_value():
    # r^2 = 0.25, radial factor 1 + 0.1 * 0.25 = 1.025
    np.testing.assert_allclose(distort([0.5, 0.0], (0.1, 0, 0, 0, 0)), [0.5125, 0.0], atol=1e-15)


def test_distort_tangential_value():
    # x = 0.2, y = 0.1: r^2 = 0.05; dx = 2 p1 x y + p2 (r^2 + 2x^2), dy = p1 (r^2 + 2y^2) + 2 p2 x y
    p1, p2 = 0.01, -0.02
    x, y = 0.2, 0.1
    want = [x + 2 * p1 * x * y + p2 * (0.05 + 0.08), y + p1 * (0.05 + 0.02) + 2 * p2 * x * y]
    np.testing.assert_allclose(distort([x, y], (0, 0, p1, p2, 0)), want, atol=1e-15)


@settings(max_examples=200)
@given(st.floats(-0.49, 0.49), st.floats(-0.49, 0.49),
       st.lists(st.floats(-0.1, 0.1), min_size=5, max_size=5))
def test_undistort_inverts_distort(x, y, k):
    if x * x + y * y > 0.49:
        return
    dist = (k[0], k[1], k[2] * 0.1, k[3] * 0.1, k[4])
    p = np.array([x, y])
    np.testing.assert_allclose(undistort(distort(p, dist), dist), p, atol=1e-9)


def test_project_optical_axis_and_pinhole():
    intr = Intrinsics(1000.0, 900.0, 960.0, 540.0)
    np.testing.assert_allclose(project([0, 0, 2], intr), [960.0, 540.0])
    assert project([1, 0, 2], intr)[0] == pytest.approx(1460.0)


def test_project_behind_camera():
    with pytest.raises(PointBehindCameraError):
        project([0, 0, -1], Intrinsics(1000.0, 1000.0, 960.0, 540.0))


@given(vec3, st.floats(0.1, 10.0))
def test_project_scale_consistent(p, lam):
    p = np.array([p[0], p[1], abs(p[2]) + 0.5])
    intr = Intrinsics(1000.0, 1010.0, 960.0, 540.0)
    np.testing.assert_allclose(project(lam * p, intr), project(p, intr), rtol=1e-12, atol=1e-9)


def test_world_to_cam_identity_and_quarter_turn():
    p = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(world_to_cam(p, Extrinsics()), p)
    # active right-handed rotation: +90 degrees about z maps x onto y
    ext = Extrinsics([0, 0, np.pi / 2], [0, 0, 0])
    np.testing.assert_allclose(world_to_cam([1, 0, 0], ext), [0, 1, 0], atol=1e-15)


@given(vec3, vec3, vec3)
def test_world_cam_roundtrip(r, t, p):
    ext = Extrinsics(r, t)
    np.testing.assert_allclose(cam_to_world(world_to_cam(p, ext), ext), p, atol=1e-12)
    np.testing.assert_allclose(world_to_cam(cam_to_world(p, ext), ext), p, atol=1e-12)


def test_intrinsics_invariants():
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        Intrinsics(1.0, 1.0, np.nan, 0.0)
    R = rotation_matrix([0.3, -0.2, 0.1])
    np.testing.assert_allclose(Extrinsics([0.3, -0.2, 0.1]).R, R)


def test_look_at_centers_target():
    ext = look_at([3.0, 1.0, 2.0], [0.0, 0.0, 1.0])
    intr = Intrinsics(1000.0, 1000.0, 960.0, 540.0)
    np.testing.assert_allclose(project(world_to_cam([0, 0, 1.0], ext), intr), [960, 540], atol=1e-9)
    np.testing.assert_allclose(ext.center, [3.0, 1.0, 2.0], atol=1e-12)


def test_calibration_file_roundtrip(tmp_path):
    cams = [CameraParams("a", Intrinsics(1000.0, 1001.0, 950.0, 530.0, (0.01, 0.0, 0.001, 0.0, 0.0)),
                         Extrinsics([0.1, 0.2, 0.3], [1.0, 2.0, 3.0]))]
    save_calibration(cams, tmp_path / "c.json")
    back = load_calibration(tmp_path / "c.json")
    assert back[0].name == "a"
    assert back[0].intrinsics == cams[0].intrinsics
    assert back[0].extrinsics == cams[0].extrinsics
