"""Geometry primitives: poses, rotations, grids, and body-frame angles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cone_mapper.core import (
    ComptonCone,
    ConfigurationError,
    GridMap,
    Position3,
    SensorPose,
    grid_from_config,
    perpendicular_frame,
    polar_angles,
    polar_angles_many,
    rotation_matrix,
)

angles = st.floats(-math.pi, math.pi, allow_nan=False)
coords = st.floats(-100.0, 100.0, allow_nan=False)


def test_position_rejects_non_finite():
    with pytest.raises(ValueError):
        Position3(0.0, math.nan, 0.0)
    with pytest.raises(ValueError):
        Position3(math.inf, 0.0, 0.0)


def test_position_distance():
    a = Position3(0.0, 0.0, 0.0)
    b = Position3(3.0, 4.0, 0.0)
    assert a.distance_to(b) == 5.0


def test_pose_angle_range_enforced():
    p = Position3(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        SensorPose(p, yaw=3.5)
    with pytest.raises(ValueError):
        SensorPose(p, pitch=-3.2)


@given(yaw=angles, pitch=angles, roll=angles)
def test_rotation_matrix_is_orthonormal(yaw, pitch, roll):
    r = rotation_matrix(yaw, pitch, roll)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-12)


def test_cone_rejects_far_from_unit_axis():
    pose = SensorPose(Position3(0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        ComptonCone(pose, np.array([1.0, 1.0, 0.0]), 0.5, 0.0, 0)


def test_cone_renormalizes_tiny_axis_deviation():
    pose = SensorPose(Position3(0.0, 0.0, 0.0))
    axis = np.array([1.0 + 5e-7, 0.0, 0.0])
    cone = ComptonCone(pose, axis, 0.5, 0.0, 0)
    assert math.isclose(float(np.linalg.norm(cone.axis)), 1.0, abs_tol=1e-15)


def test_cone_validates_opening_angle_and_timestamp():
    pose = SensorPose(Position3(0.0, 0.0, 0.0))
    axis = np.array([0.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        ComptonCone(pose, axis, 0.0, 0.0, 0)
    with pytest.raises(ValueError):
        ComptonCone(pose, axis, math.pi, 0.0, 0)
    with pytest.raises(ValueError):
        ComptonCone(pose, axis, 0.5, -1.0, 0)


def test_grid_survey_scale_cell_count():
    g = grid_from_config(Position3(0.0, 0.0, 0.0), 50.0, 50.0, 0.5)
    assert g.n_cells == 10000


def test_grid_single_cell():
    g = grid_from_config(Position3(0.0, 0.0, 0.0), 1.0, 1.0, 1.0)
    assert g.n_cells == 1
    c = g.cell_center(0)
    assert (c.x, c.y, c.z) == (0.5, 0.5, 0.0)


def test_grid_row_major_enumeration():
    g = grid_from_config(Position3(0.0, 0.0, 0.0), 3.0, 2.0, 1.0)
    assert g.n_cells == 6
    expected = [
        (0.5, 0.5), (1.5, 0.5), (2.5, 0.5),
        (0.5, 1.5), (1.5, 1.5), (2.5, 1.5),
    ]
    for j, (x, y) in enumerate(expected):
        c = g.cell_center(j)
        assert (c.x, c.y) == (x, y)


def test_grid_rejects_bad_parameters():
    o = Position3(0.0, 0.0, 0.0)
    with pytest.raises(ConfigurationError):
        grid_from_config(o, -1.0, 2.0, 1.0)
    with pytest.raises(ConfigurationError):
        grid_from_config(o, 2.0, 2.0, 0.0)
    with pytest.raises(ConfigurationError):
        GridMap(o, 1.0, 0, 3)


def test_cell_center_out_of_range():
    g = grid_from_config(Position3(0.0, 0.0, 0.0), 3.0, 2.0, 1.0)
    with pytest.raises(IndexError):
        g.cell_center(6)
    with pytest.raises(IndexError):
        g.cell_center(-1)


def test_nearest_cell_inverts_cell_center():
    g = grid_from_config(Position3(-2.0, 1.0, 0.0), 5.0, 4.0, 0.5)
    for j in range(g.n_cells):
        assert g.nearest_cell(g.cell_center(j)) == j


def test_centers_distinct_and_spaced_by_resolution():
    g = grid_from_config(Position3(0.0, 0.0, 0.0), 4.0, 3.0, 0.5)
    c = g.centers()
    assert len(np.unique(c[:, :2], axis=0)) == g.n_cells
    row = c[: g.nx]
    assert np.allclose(np.diff(row[:, 0]), g.resolution)
    col = c[:: g.nx]
    assert np.allclose(np.diff(col[:, 1]), g.resolution)


def test_grid_heights_reach_centers():
    h = np.arange(6.0).reshape(2, 3)
    g = GridMap(Position3(0.0, 0.0, 10.0), 1.0, 3, 2, h)
    assert g.cell_center(4).z == 14.0
    assert g.height_at(1.2, 1.7) == 14.0


def test_polar_angles_pole_and_equator():
    pose = SensorPose(Position3(0.0, 0.0, 0.0))
    _, theta = polar_angles(pose, Position3(0.0, 0.0, 5.0))
    assert math.isclose(theta, 0.0, abs_tol=1e-12)
    phi, theta = polar_angles(pose, Position3(2.0, 0.0, 0.0))
    assert math.isclose(theta, math.pi / 2, abs_tol=1e-12)
    assert math.isclose(phi, 0.0, abs_tol=1e-12)


def test_polar_angles_yawed_frame_shifts_phi():
    target = Position3(3.0, 1.0, 0.5)
    base = SensorPose(Position3(0.0, 0.0, 0.0))
    yawed = SensorPose(Position3(0.0, 0.0, 0.0), yaw=math.pi / 2)
    phi0, theta0 = polar_angles(base, target)
    phi1, theta1 = polar_angles(yawed, target)
    assert math.isclose(theta1, theta0, abs_tol=1e-12)
    assert math.isclose(phi1, phi0 - math.pi / 2, abs_tol=1e-12)


def test_polar_angles_rejects_coincident_target():
    pose = SensorPose(Position3(1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        polar_angles(pose, Position3(1.0, 2.0, 3.0))


@given(
    yaw=angles, pitch=angles, roll=angles,
    tx=coords, ty=coords, tz=coords,
)
@settings(max_examples=200)
def test_body_frame_direction_round_trips(yaw, pitch, roll, tx, ty, tz):
    pose = SensorPose(Position3(0.5, -0.25, 1.0), yaw, pitch, roll)
    target = Position3(tx, ty, tz)
    d = target.as_array() - pose.position.as_array()
    n = float(np.linalg.norm(d))
    if n < 1e-6:
        return
    phi, theta = polar_angles(pose, target)
    body = np.array(
        [
            math.sin(theta) * math.cos(phi),
            math.sin(theta) * math.sin(phi),
            math.cos(theta),
        ]
    )
    world = pose.rotation() @ body
    assert np.allclose(world, d / n, atol=1e-9)


def test_polar_angles_many_matches_scalar():
    pose = SensorPose(Position3(1.0, -2.0, 0.5), yaw=0.3, pitch=-0.2, roll=0.9)
    targets = np.array([[4.0, 1.0, 2.0], [-3.0, 0.5, -1.0], [1.0, 5.0, 0.5]])
    phis, thetas = polar_angles_many(pose, targets)
    for i, t in enumerate(targets):
        phi, theta = polar_angles(pose, Position3(*t))
        assert math.isclose(phis[i], phi, abs_tol=1e-12)
        assert math.isclose(thetas[i], theta, abs_tol=1e-12)


def test_perpendicular_frame_spans_normal_plane():
    for d in (np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]),
              np.array([0.6, -0.64, 0.48])):
        d = d / np.linalg.norm(d)
        e1, e2 = perpendicular_frame(d)
        assert abs(float(np.dot(e1, d))) < 1e-12
        assert abs(float(np.dot(e2, d))) < 1e-12
        assert abs(float(np.dot(e1, e2))) < 1e-12
        assert math.isclose(float(np.linalg.norm(e1)), 1.0, abs_tol=1e-12)
        assert math.isclose(float(np.linalg.norm(e2)), 1.0, abs_tol=1e-12)
