import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from masc.errors import DimensionMismatch, NonConvergenceWarning
from masc.solver import WeightVector, objective, project_simplex, solve_simplex_wls

from oracles import grid_objective, slsqp_weights


def test_exact_interior_combination():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(3, 8))
    c = np.array([0.3, 0.7, 0.0])
    w, rep = solve_simplex_wls(c @ x0, x0, donor_ids=["a", "b", "c"])
    np.testing.assert_allclose(w.weights, c, atol=1e-9)
    assert rep.converged and rep.objective < 1e-9
    assert w["b"] == pytest.approx(0.7)


def test_target_outside_hull_goes_to_vertex():
    x0 = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    w, _ = solve_simplex_wls(np.array([5.0, -1.0]), x0)
    np.testing.assert_allclose(w.weights, [0, 1, 0], atol=1e-12)


def test_identical_donors_split_evenly():
    x0 = np.array([[1.0, 2.0], [1.0, 2.0], [5.0, 5.0]])
    w, _ = solve_simplex_wls(np.array([1.0, 2.0]), x0)
    np.testing.assert_allclose(w.weights, [0.5, 0.5, 0.0], atol=1e-9)


def test_v_changes_the_tradeoff():
    x0 = np.array([[0.0, 1.0], [1.0, 0.0]])
    x1 = np.array([0.0, 0.0])
    w, _ = solve_simplex_wls(x1, x0, [10.0, 1.0])
    # closed form: w2 = v2 / (v1 + v2)
    np.testing.assert_allclose(w.weights, [10 / 11, 1 / 11], atol=1e-10)


def test_input_errors():
    with pytest.raises(DimensionMismatch):
        solve_simplex_wls(np.zeros(3), np.zeros((2, 4)))
    with pytest.raises(DimensionMismatch):
        solve_simplex_wls(np.zeros(3), np.zeros((1, 3)))
    with pytest.raises(DimensionMismatch):
        solve_simplex_wls(np.zeros(3), np.zeros((2, 3)), [1.0, 1.0])
    with pytest.raises(DimensionMismatch):
        solve_simplex_wls(np.zeros(3), np.zeros((2, 3)), donor_ids=["a"])


def test_weight_vector_rejects_infeasible():
    with pytest.raises(ValueError):
        WeightVector(("a", "b"), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        WeightVector(("a", "b"), np.array([1.1, -0.1]))


def test_non_convergence_warns_and_returns_feasible_point():
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=(30, 5))
    with pytest.warns(NonConvergenceWarning):
        w, rep = solve_simplex_wls(rng.normal(size=5), x0, tolerance=0.0, max_iter=1)
    assert not rep.converged
    assert w.weights.min() >= 0 and w.weights.sum() == pytest.approx(1.0)


def test_project_simplex():
    np.testing.assert_allclose(project_simplex(np.array([0.2, 0.2])), [0.5, 0.5])
    np.testing.assert_allclose(project_simplex(np.array([3.0, 0.0, -1.0])), [1, 0, 0])


def test_matches_grid_oracle_small():
    rng = np.random.default_rng(7)
    for _ in range(10):
        m, k = rng.integers(2, 4), rng.integers(1, 6)
        x0, x1, v = rng.normal(size=(m, k)), rng.normal(size=k), rng.uniform(0.1, 1, k)
        w, rep = solve_simplex_wls(x1, x0, v)
        best, _ = grid_objective(x1, x0, v)
        assert rep.objective <= best + 1e-6


problem = st.integers(2, 12).flatmap(
    lambda m: st.integers(1, 15).flatmap(
        lambda k: st.tuples(
            arrays(np.float64, (m, k), elements=st.floats(-10, 10)),
            arrays(np.float64, (k,), elements=st.floats(-10, 10)),
            arrays(np.float64, (k,), elements=st.floats(0.01, 10)),
        )
    )
)


def _kkt(x1, x0, v, w):
    d = v / v.sum()
    g = -2 * x0 @ (d * (x1 - w @ x0))
    lam = g[w > 1e-9].min()
    return g, lam


@settings(max_examples=150, deadline=None)
@given(problem)
def test_feasible_and_optimal(p):
    x0, x1, v = p
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        w, rep = solve_simplex_wls(x1, x0, v)
    assert np.all(w.weights >= 0)
    assert abs(w.weights.sum() - 1) <= 1e-10
    ref = slsqp_weights(x1, x0, v)
    ref = np.clip(ref, 0, None) / np.clip(ref, 0, None).sum()
    scale = 1 + np.abs(x0).max() ** 2
    assert objective(x1, x0, v, w) ** 2 <= objective(x1, x0, v, ref) ** 2 + 1e-8 * scale
    if rep.converged:
        g, _ = _kkt(x1, x0, v, w.weights)
        active = w.weights > 1e-6
        # stationarity on the support, no profitable entering donor
        assert np.ptp(g[active]) <= 1e-5 * scale
        assert np.all(g >= g[active].min() - 1e-5 * scale)


@settings(max_examples=60, deadline=None)
@given(problem, st.floats(0.01, 100), st.floats(-5, 5))
def test_affine_equivariance(p, a, b):
    x0, x1, v = p
    assume(np.ptp(x0, axis=0).max() > 1e-3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        w, rep = solve_simplex_wls(x1, x0, v)
        w2, rep2 = solve_simplex_wls(a * x1 + b, a * x0 + b, v)
    # common shift and positive scaling leave the objective ranking unchanged
    assert rep2.objective == pytest.approx(a * rep.objective, rel=1e-5, abs=1e-6 * (1 + a))


@settings(max_examples=60, deadline=None)
@given(problem, st.data())
def test_donor_permutation_invariance(p, data):
    x0, x1, v = p
    perm = np.array(data.draw(st.permutations(range(x0.shape[0]))))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        _, rep = solve_simplex_wls(x1, x0, v)
        _, rep2 = solve_simplex_wls(x1, x0[perm], v)
    assert rep2.objective == pytest.approx(rep.objective, rel=1e-6, abs=1e-7)


@settings(max_examples=1000, deadline=None)
@given(problem)
def test_always_feasible(p):
    x0, x1, v = p
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        w, _ = solve_simplex_wls(x1, x0, v)
    assert np.all(w.weights >= 0)
    assert abs(w.weights.sum() - 1) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(problem, st.floats(1e-3, 1e3))
def test_v_scale_leaves_argmin(p, c):
    x0, x1, v = p
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        w, _ = solve_simplex_wls(x1, x0, v)
        w2, _ = solve_simplex_wls(x1, x0, c * v)
    assert abs(objective(x1, x0, v, w2.weights) - objective(x1, x0, v, w.weights)) <= 1e-8
    # the argmin is unique only when the objective is strictly convex on the simplex
    z = (x0[1:] - x0[0]) * np.sqrt(v / v.sum())
    if len(z) and np.linalg.eigvalsh(z @ z.T).min() > 1e-4:
        np.testing.assert_allclose(w2.weights, w.weights, atol=1e-8)
