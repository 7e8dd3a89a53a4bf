import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from manifold_avoidance.geometry import (
    DomainError,
    GeometryError,
    ManifoldId,
    body_from_spatial,
    dist,
    exp_map,
    exp_rotation,
    hat,
    is_rotation,
    log_map,
    log_rotation,
    reorthonormalize,
    rotation_with_first_column,
    spatial_from_body,
    transport_sphere,
    vee,
)

S2 = ManifoldId.sphere()
R3 = ManifoldId.euclidean(3)

unit = st.lists(st.floats(-1, 1), min_size=3, max_size=3).map(np.array).filter(
    lambda v: np.linalg.norm(v) > 0.1).map(lambda v: v / np.linalg.norm(v))
vec3 = st.lists(st.floats(-3, 3), min_size=3, max_size=3).map(np.array)


def tangent_basis(p):
    R = rotation_with_first_column(p)
    return R[:, 1], R[:, 2]


def test_manifold_parse():
    assert ManifoldId.parse("s2").is_sphere
    assert ManifoldId.parse("r3") == R3
    assert ManifoldId.parse("R2").ambient_dim == 2
    with pytest.raises(GeometryError):
        ManifoldId.parse("h2")


def test_distance_examples():
    assert dist(R3, [0, 0, 0], [3, 4, 0]) == pytest.approx(5.0)
    assert dist(S2, [1, 0, 0], [0, 1, 0]) == pytest.approx(math.pi / 2)
    assert dist(S2, [1, 0, 0], [-1, 0, 0]) == pytest.approx(math.pi)
    # precision near zero angle, where arccos would lose half the digits
    a = 1e-9
    assert dist(S2, [1, 0, 0], [math.cos(a), math.sin(a), 0]) == pytest.approx(a, rel=1e-9)


def test_sphere_rejects_non_unit_points():
    with pytest.raises(GeometryError):
        dist(S2, [2, 0, 0], [0, 1, 0])


def test_log_antipodal_is_domain_error():
    with pytest.raises(DomainError):
        log_map(S2, [0, 0, 1], [0, 0, -1])


def test_log_quarter_circle():
    v = log_map(S2, [1, 0, 0], [0, 1, 0])
    np.testing.assert_allclose(v, [0, math.pi / 2, 0], atol=1e-15)


@given(unit, unit)
def test_sphere_exp_log_roundtrip(p, q):
    if dist(S2, p, q) > math.pi - 1e-3:
        return
    v = log_map(S2, p, q)
    assert abs(v @ p) < 1e-12
    assert np.linalg.norm(exp_map(S2, p, v) - q) < 1e-8
    assert abs(np.linalg.norm(v) - dist(S2, p, q)) < 1e-9


@given(vec3, vec3)
def test_euclidean_exp_log_roundtrip(p, q):
    v = log_map(R3, p, q)
    np.testing.assert_allclose(exp_map(R3, p, v), q, atol=1e-12)
    assert abs(np.linalg.norm(v) - dist(R3, p, q)) < 1e-12


@given(vec3, vec3)
def test_hat_vee(a, b):
    np.testing.assert_allclose(hat(a) @ b, np.cross(a, b), atol=1e-12)
    np.testing.assert_allclose(vee(hat(a)), a)


@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3).map(np.array))
def test_rotation_exp_log_roundtrip(a):
    R = exp_rotation(a)
    assert is_rotation(R, 1e-12)
    theta = np.linalg.norm(a)
    if theta > math.pi - 1e-3:
        return
    np.testing.assert_allclose(log_rotation(R), a, atol=1e-9)


def test_exp_rotation_matches_series():
    # independent oracle: truncated power series of the matrix exponential
    a = np.array([0.3, -1.1, 0.7])
    K = hat(a)
    series = np.eye(3)
    term = np.eye(3)
    for m in range(1, 40):
        term = term @ K / m
        series = series + term
    np.testing.assert_allclose(exp_rotation(a), series, atol=1e-14)


def test_log_rotation_near_pi_is_domain_error():
    with pytest.raises(DomainError):
        log_rotation(exp_rotation([0, 0, math.pi]))


@given(unit)
def test_rotation_with_first_column(q):
    R = rotation_with_first_column(q)
    assert is_rotation(R, 1e-12)
    np.testing.assert_allclose(R[:, 0], q, atol=1e-12)


@given(unit, st.floats(-2, 2), st.floats(-2, 2))
def test_body_spatial_roundtrip(q, a, b):
    R = rotation_with_first_column(q)
    v = a * R[:, 1] + b * R[:, 2]
    xi = body_from_spatial(R, v)
    assert xi[0] == 0.0
    np.testing.assert_allclose(spatial_from_body(R, xi), v, atol=1e-12)


def test_reorthonormalize():
    R = exp_rotation([0.2, 0.1, -0.4])
    noisy = R + 1e-7 * np.arange(9).reshape(3, 3)
    fixed = reorthonormalize(noisy)
    assert is_rotation(fixed, 1e-13)
    assert np.linalg.norm(fixed - R) < 1e-6


@given(unit, unit, st.floats(-1, 1), st.floats(-1, 1))
def test_transport_is_isometry_into_target_tangent(p, q, a, b):
    if dist(S2, p, q) > math.pi - 1e-3:
        return
    e1, e2 = tangent_basis(p)
    v = a * e1 + b * e2
    w = transport_sphere(p, q, v)
    assert abs(w @ q) < 1e-9
    assert abs(np.linalg.norm(w) - np.linalg.norm(v)) < 1e-12
    # the geodesic direction is carried to the geodesic direction
    if 1e-6 < dist(S2, p, q):
        u = log_map(S2, p, q)
        np.testing.assert_allclose(transport_sphere(p, q, u), -log_map(S2, q, p), atol=1e-9)
