import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from manifold_avoidance.geometry import ManifoldId, exp_map, rotation_with_first_column
from fd import fd_gradient_r3, fd_gradient_s2, fd_tangent, relative_error
from manifold_avoidance.potentials import (
    InteractionGraph,
    PotentialParams,
    SingularityError,
    eval_potential,
    grad1_potential,
    pair_potential_symmetry_check,
    potential_derivative,
)

S2 = ManifoldId.sphere()
R3 = ManifoldId.euclidean(3)


def test_frozen_values(oracles):
    for row in oracles["potentials"]:
        p = PotentialParams(row["family"], row["D"], row["eps"], row["k"])
        assert eval_potential(p, row["d"]) == pytest.approx(row["value"], rel=1e-12, abs=1e-300)
        assert potential_derivative(p, row["d"]) == pytest.approx(row["derivative"], rel=1e-9, abs=1e-300)


def test_bench_values():
    p = PotentialParams("inverse", 2.0, 1e-5, 16)
    assert eval_potential(p, 2.0) == pytest.approx(1 / (1 + 1e-5))
    assert eval_potential(p, 0.0) == pytest.approx(1e5)
    s2 = PotentialParams("inverse", 0.5, 1e-5, 8)
    assert eval_potential(s2, 0.373) == pytest.approx(1 / (1e-5 + 256 * 0.373 ** 8))


def test_bump_support():
    p = PotentialParams("bump", 1.0, 0.5, 2)
    assert eval_potential(p, 1.0) == 0.0
    assert eval_potential(p, 5.0) == 0.0
    assert eval_potential(p, 0.0) == pytest.approx(math.exp(-1) / 0.5)
    assert potential_derivative(p, 1.0) == 0.0


@pytest.mark.parametrize("kw, msg", [({"eps": 0.0}, "eps"), ({"D": -1.0}, "D"), ({"k": 0}, "k"),
                                     ({"family": "gauss"}, "family")])
def test_param_validation(kw, msg):
    with pytest.raises(ValueError, match=msg):
        PotentialParams(**{"family": "inverse", "D": 1.0, "eps": 0.1, "k": 4, **kw})


def test_no_potential_is_zero():
    assert eval_potential(None, 0.3) == 0.0
    np.testing.assert_array_equal(grad1_potential(R3, None, [0, 0, 0], [1, 0, 0]), 0.0)


def test_gradient_singular_at_coincidence():
    with pytest.raises(SingularityError):
        grad1_potential(R3, PotentialParams("inverse", 1.0, 0.1, 1), [1, 2, 3], [1, 2, 3])
    # k >= 2: V'(d)/d stays finite and the gradient vanishes by symmetry
    g = grad1_potential(R3, PotentialParams("inverse", 1.0, 0.1, 2), [1, 2, 3], [1, 2, 3])
    np.testing.assert_array_equal(g, 0.0)


def test_gradient_is_repulsive():
    p = PotentialParams("inverse", 1.0, 0.1, 4)
    g = grad1_potential(R3, p, [0, 0, 0], [0.5, 0, 0])
    # descending V moves p away from q
    assert g[0] > 0 and abs(g[1]) == 0 and abs(g[2]) == 0


params_st = st.one_of(
    st.builds(PotentialParams, st.just("inverse"), st.floats(0.3, 3.0), st.floats(1e-3, 1.0), st.integers(2, 8)),
    st.builds(PotentialParams, st.just("bump"), st.floats(0.5, 3.0), st.floats(0.1, 2.0), st.integers(2, 6)),
)


@given(params_st, st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_grad_antisymmetric_in_r3(params, xs):
    p, q = np.array(xs[:3]), np.array(xs[3:])
    if np.linalg.norm(p - q) < 1e-3:
        return
    g1 = grad1_potential(R3, params, p, q)
    g2 = grad1_potential(R3, params, q, p)
    np.testing.assert_allclose(g1, -g2, atol=1e-12 * (1 + np.linalg.norm(g1)))


def test_gradient_on_sphere_is_tangent():
    p = PotentialParams("inverse", 0.5, 1e-3, 8)
    a = np.array([1.0, 0, 0])
    b = np.array([math.cos(0.4), math.sin(0.4), 0])
    g = grad1_potential(S2, p, a, b)
    assert abs(g @ a) < 1e-15
    # V decreases with distance, so its gradient points towards the other agent
    assert g[1] > 0


def test_symmetry_check():
    p = PotentialParams("inverse", 1.0, 0.1, 4)
    g = InteractionGraph.uniform(2, [(0, 1)], p)
    assert pair_potential_symmetry_check(g, R3, [0, 0, 0], [1, 0, 0])
    raw = {(0, 1): p, (1, 0): PotentialParams("inverse", 1.0, 0.2, 4)}
    assert not pair_potential_symmetry_check(g, R3, [0, 0, 0], [1, 0, 0], raw)


def test_graph_normalizes_edges():
    g = InteractionGraph.uniform(4, [(1, 0), (2, 0), (0, 3), (2, 1), (3, 2)], None)
    assert g.edges == [(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)]
    assert g.neighbors(0) == [1, 2, 3]
    assert g.neighbors(1) == [0, 2]
    with pytest.raises(ValueError):
        InteractionGraph.uniform(2, [(0, 0)], None)
    with pytest.raises(ValueError):
        InteractionGraph.uniform(2, [(0, 2)], None)


@pytest.mark.parametrize("family, D, eps, k", [("inverse", 2.0, 1e-5, 16), ("inverse", 0.5, 1e-5, 8),
                                                ("bump", 1.0, 0.1, 4)])
def test_gradient_matches_finite_differences(family, D, eps, k):
    params = PotentialParams(family, D, eps, k)
    rng = np.random.default_rng(7)
    for _ in range(20):
        p = rng.normal(size=3)
        q = p + rng.normal(size=3) * 0.4 * D
        g = grad1_potential(R3, params, p, q)
        assert relative_error(g, fd_gradient_r3(params, p, q)) < 1e-9
        a = p / np.linalg.norm(p)
        b = exp_map(S2, a, fd_tangent(rng, a, 0.8 * D))
        g = grad1_potential(S2, params, a, b)
        assert relative_error(g, fd_gradient_s2(params, a, b)) < 1e-9
