from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_transform
from plantreg.geometry import (
    PointCloud,
    RigidTransform,
    SigmaWeights,
    apply_transform,
    cloud_diameter,
    compose,
    kabsch,
    project_to_rotation,
    relative_magnitude,
    rotation_angle,
    rotation_z,
)

angles = st.floats(-math.pi, math.pi, allow_nan=False)
vec3 = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3)


def transforms():
    return st.builds(
        lambda ax, a, t: RigidTransform.from_axis_angle(np.asarray(ax) + [1e-3, 0, 0], a, t), vec3, angles, vec3
    )


def test_identity_leaves_cloud_unchanged(rng):
    pc = PointCloud(rng.normal(size=(50, 3)), rng.random((50, 3)))
    out = apply_transform(RigidTransform(), pc)
    np.testing.assert_array_equal(out.points, pc.points)
    np.testing.assert_array_equal(out.colors, pc.colors)


def test_quarter_turn_about_z_maps_x_to_y():
    t = RigidTransform(rotation_z(math.pi / 2))
    np.testing.assert_allclose(t.apply_points([[1.0, 0.0, 0.0]]), [[0.0, 1.0, 0.0]], atol=1e-12)


def test_transform_then_inverse_restores_points(rng):
    pts = rng.normal(size=(100, 3))
    t = random_transform(rng)
    back = t.inverse().apply_points(t.apply_points(pts))
    assert np.max(np.abs(back - pts)) <= 1e-9


def test_normals_rotate_with_the_cloud(rng):
    n = rng.normal(size=(20, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    pc = PointCloud(rng.normal(size=(20, 3)), normals=n)
    t = random_transform(rng)
    out = apply_transform(t, pc)
    np.testing.assert_allclose(out.normals, n @ t.rotation.T, atol=1e-12)


def test_compose_axioms(rng):
    t = random_transform(rng)
    ident = compose(RigidTransform(), t)
    np.testing.assert_array_equal(ident.as_matrix(), t.as_matrix())
    np.testing.assert_allclose(compose(t, t.inverse()).as_matrix(), np.eye(4), atol=1e-9)


def test_compose_of_z_rotations_adds_angles():
    r = compose(RigidTransform(rotation_z(math.radians(30))), RigidTransform(rotation_z(math.radians(60))))
    np.testing.assert_allclose(r.rotation, rotation_z(math.pi / 2), atol=1e-12)


def test_compose_matches_matrix_product(rng):
    a, b = random_transform(rng), random_transform(rng)
    np.testing.assert_allclose(compose(a, b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-12)


def test_relative_magnitude_examples():
    assert relative_magnitude(RigidTransform(), RigidTransform()) == 0.0
    shift = RigidTransform(translation=[0.1, 0.0, 0.0])
    assert relative_magnitude(RigidTransform(), shift, SigmaWeights(1, 1)) == pytest.approx(0.1, abs=1e-12)
    quarter = RigidTransform(rotation_z(math.pi / 2))
    assert relative_magnitude(quarter, RigidTransform(), SigmaWeights(1, 0)) == pytest.approx(math.pi / 2, abs=1e-12)


def test_rotation_angle_agrees_with_trace_formula(rng):
    for _ in range(50):
        r = random_transform(rng).rotation
        ref = math.acos(np.clip((np.trace(r) - 1) / 2, -1, 1))
        assert rotation_angle(r) == pytest.approx(ref, abs=1e-7)


def test_diameter_examples(rng):
    assert cloud_diameter(PointCloud([[1.0, 2.0, 3.0]])) == 0.0
    cube = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    assert cloud_diameter(cube) == pytest.approx(math.sqrt(3), abs=1e-12)
    pts = rng.normal(size=(200, 3))
    assert cloud_diameter(pts + [5.0, -3.0, 2.0]) == pytest.approx(cloud_diameter(pts), abs=1e-12)
    with pytest.raises(ValueError):
        cloud_diameter(np.zeros((0, 3)))


def test_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud([[0.0, 0.0, np.nan]])
    with pytest.raises(ValueError):
        PointCloud([[0.0, 0.0, 0.0]], colors=[[0.0, 0.0]])
    with pytest.raises(ValueError):
        PointCloud([[0.0, 0.0, 0.0]], normals=[[0.0, 0.0, 2.0]])
    with pytest.raises(ValueError):
        PointCloud([[0.0, 0.0, 0.0]], colors=[[1.5, 0.0, 0.0]])


def test_rotation_is_reprojected_to_a_proper_rotation(rng):
    noisy = random_transform(rng).rotation + rng.normal(scale=1e-3, size=(3, 3))
    t = RigidTransform(noisy)
    r = t.rotation
    assert np.linalg.norm(r.T @ r - np.eye(3)) <= 1e-9
    assert abs(np.linalg.det(r) - 1) <= 1e-9
    reflected = np.diag([1.0, 1.0, -1.0])
    assert np.linalg.det(project_to_rotation(reflected)) == pytest.approx(1.0)


def test_kabsch_recovers_transform_and_never_reflects(rng):
    pts = rng.normal(size=(30, 3))
    t = random_transform(rng)
    est = kabsch(pts, t.apply_points(pts))
    np.testing.assert_allclose(est.as_matrix(), t.as_matrix(), atol=1e-10)
    # mirrored target: best proper rotation, not a reflection
    est = kabsch(pts, pts * [1, 1, -1])
    assert np.linalg.det(est.rotation) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(transforms(), st.integers(0, 2**31))
def test_distances_are_preserved(t, seed):
    pts = np.random.default_rng(seed).normal(size=(20, 3))
    out = t.apply_points(pts)
    d0 = np.linalg.norm(pts[:10] - pts[10:], axis=1)
    d1 = np.linalg.norm(out[:10] - out[10:], axis=1)
    assert np.max(np.abs(d0 - d1)) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(transforms(), transforms(), transforms())
def test_compose_is_associative(a, b, c):
    left = compose(compose(a, b), c).as_matrix()
    right = compose(a, compose(b, c)).as_matrix()
    assert np.max(np.abs(left - right)) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(transforms(), transforms(), st.floats(0.0, 5.0), st.floats(0.01, 5.0))
def test_relative_magnitude_is_symmetric(a, b, wr, wt):
    w = SigmaWeights(wr, wt)
    assert relative_magnitude(a, b, w) == pytest.approx(relative_magnitude(b, a, w), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(transforms())
def test_constructed_rotations_are_orthonormal(t):
    r = t.rotation
    assert np.linalg.norm(r.T @ r - np.eye(3)) <= 1e-9
    assert abs(np.linalg.det(r) - 1) <= 1e-9
