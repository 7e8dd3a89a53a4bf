import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from manifold_avoidance.dynamics import (
    EuclideanState,
    IntegrationError,
    SphereState,
    el_rhs_euclidean,
    functional_J,
    hamiltonian,
    hamiltonian_series,
    integrate,
    is_horizontal,
    lifted_gradients,
    reduced_rhs_so3,
    rotation_defect,
    time_steps,
)
from manifold_avoidance.geometry import exp_rotation, spatial_from_body
from manifold_avoidance.potentials import InteractionGraph, PotentialParams, grad1_potential
from manifold_avoidance.geometry import ManifoldId


def euclid_state(q, v, a, j):
    return EuclideanState(*(np.array(x, dtype=float) for x in (q, v, a, j)))


def test_time_steps():
    steps = time_steps(4.0, 0.005)
    assert len(steps) == 800 and steps.sum() == pytest.approx(4.0)
    steps = time_steps(1.0, 0.3)
    assert steps.sum() == pytest.approx(1.0) and steps[-1] == pytest.approx(0.1)
    with pytest.raises(ValueError):
        time_steps(1.0, 0.0)


def test_free_motion_is_cubic():
    g = InteractionGraph.uniform(2, [(0, 1)], None)
    s0 = euclid_state([[0, 0], [5, 5]], [[1, 0], [0, 1]], [[0.2, -0.4], [0, 0]], [[0.3, 0.1], [-1, 0]])
    for method in ("euler", "rk4"):
        tr = integrate(g, s0, 0.01, 2.0, method)
        t = tr.t[:, None]
        expect = s0.q[0] + s0.dq[0] * t + s0.d2q[0] * t ** 2 / 2 + s0.d3q[0] * t ** 3 / 6
        tol = 1e-12 if method == "rk4" else 0.05
        np.testing.assert_allclose(tr.positions[:, 0], expect, atol=tol)
    assert len(tr) == 201


def test_euclid_against_frozen_oracle(oracles):
    o = oracles["euclid"]
    fam, D, eps, k = o["potential"]
    g = InteractionGraph.uniform(2, [(0, 1)], PotentialParams(fam, D, eps, k))
    s0 = euclid_state(o["q0"], o["v0"], o["a0"], o["j0"])
    tr = integrate(g, s0, 0.001, o["T"], "rk4")
    np.testing.assert_allclose(tr.positions[-1], o["qT"], atol=1e-10)
    np.testing.assert_allclose(tr.velocities[-1], o["vT"], atol=1e-10)
    np.testing.assert_allclose(tr.accel[-1], o["aT"], atol=1e-9)
    np.testing.assert_allclose(tr.jerk[-1], o["jT"], atol=1e-9)
    # Euler is first order: the error roughly halves with the step
    errs = [np.abs(integrate(g, s0, h, o["T"], "euler").positions[-1] - o["qT"]).max() for h in (0.004, 0.002)]
    assert 1.7 < errs[0] / errs[1] < 2.3


def test_sphere_against_frozen_oracle(oracles):
    o = oracles["sphere"]
    fam, D, eps, k = o["potential"]
    g = InteractionGraph.uniform(2, [(0, 1)], PotentialParams(fam, D, eps, k))
    s0 = SphereState(np.array(o["R0"]), np.array(o["xi0"]), np.array(o["dxi0"]), np.array(o["d2xi0"]))
    tr = integrate(g, s0, 0.001, o["T"], "rk4")
    np.testing.assert_allclose(tr.positions[-1], o["qT"], atol=1e-10)
    np.testing.assert_allclose(tr.body[-1], o["xiT"], atol=1e-10)
    np.testing.assert_allclose(tr.accel[-1], o["dxiT"], atol=1e-9)
    np.testing.assert_allclose(tr.jerk[-1], o["d2xiT"], atol=1e-9)


def test_euclid_rhs_is_negative_gradient_sum():
    p = PotentialParams("inverse", 1.0, 0.1, 4)
    g = InteractionGraph.uniform(3, [(0, 1), (1, 2)], p)
    q = np.array([[0.0, 0, 0], [0.5, 0.1, 0], [0.2, 0.9, 0.3]])
    s = euclid_state(q, q * 0, q * 0, q * 0)
    r3 = ManifoldId.euclidean(3)
    expect = np.array([-grad1_potential(r3, p, q[0], q[1]),
                       -grad1_potential(r3, p, q[1], q[0]) - grad1_potential(r3, p, q[1], q[2]),
                       -grad1_potential(r3, p, q[2], q[1])])
    np.testing.assert_allclose(el_rhs_euclidean(s, g), expect, rtol=1e-13)


def test_lift_maps_gradient_to_horizontal_body_vector():
    p = PotentialParams("inverse", 0.5, 1e-3, 4)
    g = InteractionGraph.uniform(2, [(0, 1)], p)
    R = np.array([exp_rotation([0.1, 0.2, -0.3]), exp_rotation([0.3, -0.4, 0.5])])
    s = SphereState(R, np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)))
    lifted = lifted_gradients(s, g)
    s2 = ManifoldId.sphere()
    for i in range(2):
        assert lifted[i, 0] == 0.0
        grad = grad1_potential(s2, p, R[i][:, 0], R[1 - i][:, 0])
        # the body vector generates the same tangent vector at R e1
        np.testing.assert_allclose(spatial_from_body(R[i], lifted[i]), grad, atol=1e-12)


def test_free_sphere_rhs():
    g = InteractionGraph.uniform(2, [(0, 1)], None)
    xi = np.array([[0, 0.3, 0.1], [0, 0, 0.2]])
    dxi = np.array([[0, -0.1, 0.2], [0, 0.4, 0]])
    s = SphereState(np.array([np.eye(3)] * 2), xi, dxi, dxi * 0)
    expect = -np.cross(xi, np.cross(dxi, xi))
    np.testing.assert_allclose(reduced_rhs_so3(s, g), expect, atol=1e-15)


def test_sphere_geodesic_stays_on_great_circle():
    g = InteractionGraph.uniform(2, [(0, 1)], None)
    xi = np.array([[0, 0.0, 0.7], [0, 0.5, 0.0]])
    R0 = np.array([np.eye(3), exp_rotation([0, 0, 1.0])])
    s0 = SphereState(R0, xi, np.zeros((2, 3)), np.zeros((2, 3)))
    tr = integrate(g, s0, 0.01, 3.0, "euler")
    # agent 0 rotates about e3 at rate 0.7
    t = tr.t
    np.testing.assert_allclose(tr.positions[:, 0], np.stack([np.cos(0.7 * t), np.sin(0.7 * t), 0 * t], 1),
                               atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(tr.velocities, axis=2), [[0.7, 0.5]] * len(t), atol=1e-12)


def test_coincident_agents_raise():
    g = InteractionGraph.uniform(2, [(0, 1)], PotentialParams("inverse", 1.0, 0.1, 1))
    s0 = euclid_state([[0, 0], [0, 0]], [[0, 0], [0, 0]], [[0, 0], [0, 0]], [[0, 0], [0, 0]])
    with pytest.raises(IntegrationError):
        integrate(g, s0, 0.01, 1.0)


def test_antipodal_agents_raise():
    g = InteractionGraph.uniform(2, [(0, 1)], PotentialParams("inverse", 1.0, 0.1, 4))
    R = np.array([np.eye(3), exp_rotation([0, 0, math.pi])])
    s0 = SphereState(R, np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(IntegrationError):
        integrate(g, s0, 0.01, 1.0)


def test_hamiltonian_of_free_cubic():
    # H = <v, j> - |a|^2 / 2 is constant along cubics
    g = InteractionGraph.uniform(2, [(0, 1)], None)
    s0 = euclid_state([[0, 0], [3, 0]], [[1, 2], [0, 0]], [[0.5, 0], [0, 1]], [[0, -1], [0.3, 0]])
    H = hamiltonian_series(integrate(g, s0, 0.01, 2.0, "rk4"), g)
    assert np.ptp(H) < 1e-12
    assert H[0] == pytest.approx(1 * 0 + 2 * -1 + 0 - 0.5 * (0.25 + 1))


@settings(max_examples=25)
@given(st.integers(0, 10 ** 6))
def test_hamiltonian_conserved_rk4(seed):
    rng = np.random.default_rng(seed)
    p = PotentialParams("inverse", 1.0, 0.2, 4)
    g = InteractionGraph.uniform(3, [(0, 1), (1, 2), (0, 2)], p)
    q = np.array([[0.0, 0, 0], [2, 0, 0], [0, 2, 0]]) + 0.2 * rng.normal(size=(3, 3))
    s0 = euclid_state(q, rng.normal(size=(3, 3)) * 0.3, rng.normal(size=(3, 3)) * 0.1,
                      rng.normal(size=(3, 3)) * 0.1)
    H = hamiltonian_series(integrate(g, s0, 0.005, 1.0, "rk4"), g)
    assert np.max(np.abs(H - H[0])) / max(1.0, abs(H[0])) < 1e-8


def test_sphere_rotations_stay_orthogonal_and_horizontal():
    p = PotentialParams("inverse", 0.5, 1e-3, 4)
    g = InteractionGraph.uniform(3, [(0, 1), (1, 2)], p)
    R0 = np.array([exp_rotation([0, 0, a]) for a in (0.0, 0.7, 1.4)])
    xi = np.array([[0, 0.2, 0.3], [0, -0.2, 0.1], [0, 0.1, -0.3]])
    for method in ("euler", "rk4"):
        tr = integrate(g, SphereState(R0, xi, 0.1 * xi, 0 * xi), 0.005, 4.0, method)
        assert rotation_defect(tr.rotations) < 1e-12
        assert is_horizontal(tr.body) and is_horizontal(tr.accel) and is_horizontal(tr.jerk)


def test_functional_J_conventions():
    g = InteractionGraph.uniform(2, [(0, 1)], None)
    # q = t^2/2 on [0, 1]: |q''|^2 = 1 for agent 0, agent 1 at rest
    s0 = euclid_state([[0.0], [5.0]], [[0.0], [0.0]], [[1.0], [0.0]], [[0.0], [0.0]])
    tr = integrate(g, s0, 0.01, 1.0, "rk4")
    assert functional_J(tr, g, "proofj") == pytest.approx(1.0)
    assert functional_J(tr, g, "eqj") == pytest.approx(0.5)


def test_hamiltonian_counts_each_edge_once():
    p = PotentialParams("inverse", 1.0, 1.0, 2)
    g = InteractionGraph.uniform(2, [(0, 1)], p)
    s = euclid_state([[0.0], [1.0]], [[0.0], [0.0]], [[0.0], [0.0]], [[0.0], [0.0]])
    assert hamiltonian(s, g) == pytest.approx(0.5)


def test_rk4_rotations_stay_orthogonal_under_fast_spin():
    # a close pass spins both bodies at ~200 rad/s, about 2 rad per step
    rng = np.random.default_rng(142)
    R0 = np.array([exp_rotation(rng.uniform(-np.pi, np.pi, 3) * 0.5) for _ in range(2)])
    xi, acc, jerk = (np.zeros((2, 3)) for _ in range(3))
    xi[:, 1:] = rng.uniform(-0.5, 0.5, (2, 2))
    acc[:, 1:] = rng.uniform(-0.5, 0.5, (2, 2))
    jerk[:, 1:] = rng.uniform(-0.5, 0.5, (2, 2))
    g = InteractionGraph.uniform(2, [(0, 1)], PotentialParams("inverse", 0.5, 1e-2, 4))
    tr = integrate(g, SphereState(R0, xi, acc, jerk), 0.01, 2.0, "rk4")
    assert np.abs(tr.body).max() > 100
    assert rotation_defect(tr.rotations) < 1e-12
