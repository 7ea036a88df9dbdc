from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import grid_qp

from synthcontrol.qp import (
    LOOSE_TOL,
    QpInputError,
    SimplexWeights,
    kkt_residual,
    solve_simplex_wls,
)


def random_instance(rng, k, J):
    X0 = rng.normal(size=(k, J))
    X1 = rng.normal(size=k) * 1.5
    v = rng.dirichlet(np.ones(k))
    return X1, X0, v


def on_simplex(w):
    return abs(w.sum() - 1) <= 1e-9 and w.min() >= -1e-12


def test_grid_oracle_small():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k, J = rng.integers(1, 4), rng.integers(2, 5)
        X1, X0, v = random_instance(rng, k, J)
        sol = solve_simplex_wls(X1, X0, v)
        best, _ = grid_qp(X1, X0, v, 0.01)
        assert sol.converged
        assert sol.objective <= best + 1e-6
        assert on_simplex(sol.weights.w)


def test_exact_copy_vertex():
    rng = np.random.default_rng(1)
    X0 = rng.normal(size=(4, 6))
    sol = solve_simplex_wls(X0[:, 3].copy(), X0, np.full(4, 0.25))
    assert sol.weights.w[3] >= 1 - 1e-12
    assert sol.objective <= 1e-20


def test_interior_combination_recovered():
    rng = np.random.default_rng(2)
    X0 = rng.normal(size=(5, 3))
    w_true = np.array([0.2, 0.5, 0.3])
    sol = solve_simplex_wls(X0 @ w_true, X0, np.ones(5))
    np.testing.assert_allclose(sol.weights.w, w_true, atol=1e-10)
    assert not sol.non_unique_hint


def test_non_unique_hint_when_more_donors_than_constraints():
    rng = np.random.default_rng(3)
    X0 = rng.normal(size=(2, 8))
    X1 = X0 @ rng.dirichlet(np.ones(8))
    sol = solve_simplex_wls(X1, X0, np.ones(2))
    assert sol.objective <= 1e-16
    assert sol.non_unique_hint


def test_duplicate_donor_columns():
    rng = np.random.default_rng(4)
    X0 = rng.normal(size=(3, 4))
    X0[:, 2] = X0[:, 1]
    sol = solve_simplex_wls(X0[:, 1].copy(), X0, np.ones(3))
    assert sol.weights.w[1] + sol.weights.w[2] == pytest.approx(1, abs=1e-9)
    assert sol.non_unique_hint


def test_single_donor():
    sol = solve_simplex_wls(np.array([1.0, 2.0]), np.array([[0.0], [1.0]]), np.array([0.5, 0.5]))
    assert sol.weights.w.tolist() == [1.0]
    assert sol.objective == pytest.approx(0.5 * 1 + 0.5 * 1)


def test_zero_v_entries_ignore_predictor():
    rng = np.random.default_rng(5)
    X0 = rng.normal(size=(2, 3))
    X1 = X0[:, 0].copy()
    X1[1] += 100.0
    sol = solve_simplex_wls(X1, X0, np.array([1.0, 0.0]))
    assert sol.objective <= 1e-18


def test_kkt_residual_is_algorithm_free():
    rng = np.random.default_rng(6)
    X1, X0, v = random_instance(rng, 3, 5)
    sol = solve_simplex_wls(X1, X0, v)
    assert kkt_residual(X1, X0, v, sol.weights.w) == pytest.approx(sol.kkt_residual)
    assert kkt_residual(X1, X0, v, np.full(5, 0.2)) > 1e-4


def test_scaling_invariance_of_weights():
    rng = np.random.default_rng(7)
    X1, X0, v = random_instance(rng, 3, 4)
    a = solve_simplex_wls(X1, X0, v)
    b = solve_simplex_wls(X1 * 1e3, X0 * 1e3, v * 7)
    np.testing.assert_allclose(a.weights.w, b.weights.w, atol=1e-7)


def test_ill_conditioned_instance_converges():
    rng = np.random.default_rng(8)
    X0 = rng.normal(size=(4, 30)) * np.array([[1e4], [1.0], [1e-3], [1.0]])
    X1 = rng.normal(size=4)
    sol = solve_simplex_wls(X1, X0, rng.dirichlet(np.ones(4)))
    assert sol.converged and on_simplex(sol.weights.w)


@pytest.mark.parametrize(
    "X1, X0, v",
    [
        (np.ones(2), np.ones((3, 2)), np.ones(2)),
        (np.ones(2), np.ones((2, 2)), -np.ones(2)),
        (np.ones(2), np.ones((2, 2)), np.zeros(2)),
        (np.array([1.0, np.nan]), np.ones((2, 2)), np.ones(2)),
        (np.ones(2), np.ones(2), np.ones(2)),
    ],
)
def test_bad_inputs(X1, X0, v):
    with pytest.raises(QpInputError):
        solve_simplex_wls(X1, X0, v)


def test_loose_mode_meets_margin():
    rng = np.random.default_rng(9)
    X1, X0, v = random_instance(rng, 4, 40)
    loose = solve_simplex_wls(X1, X0, v, loose=True)
    strict = solve_simplex_wls(X1, X0, v)
    assert loose.converged and loose.kkt_residual <= LOOSE_TOL
    assert on_simplex(loose.weights.w)
    assert loose.iterations <= strict.iterations
    assert loose.objective >= strict.objective - 1e-12


def test_simplex_weights_validation():
    with pytest.raises(ValueError):
        SimplexWeights(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        SimplexWeights(np.array([1.1, -0.1]))
    w = SimplexWeights(np.array([1.0, -1e-13]))
    assert w.w.min() == 0.0
    with pytest.raises(ValueError):
        w.w[0] = 0.5


finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@st.composite
def instances(draw):
    k = draw(st.integers(1, 6))
    J = draw(st.integers(2, 12))
    X0 = draw(arrays(np.float64, (k, J), elements=finite))
    X1 = draw(arrays(np.float64, (k,), elements=finite))
    v = draw(arrays(np.float64, (k,), elements=st.floats(0, 1)))
    if v.sum() <= 1e-3:
        v[0] = 1.0
    return X1, X0, v


@settings(max_examples=300, deadline=None)
@given(instances())
def test_property_feasible_and_no_worse_than_vertices(inst):
    X1, X0, v = inst
    sol = solve_simplex_wls(X1, X0, v)
    w = sol.weights.w
    assert on_simplex(w)
    vertices = ((X1[:, None] - X0) ** 2 * v[:, None]).sum(axis=0)
    centre = X1 - X0.mean(axis=1)
    scale = 1 + vertices.max()
    assert sol.objective <= vertices.min() + 1e-8 * scale
    assert sol.objective <= centre @ (v * centre) + 1e-8 * scale


@settings(max_examples=100, deadline=None)
@given(instances(), st.permutations(range(12)))
def test_property_permutation_equivariant(inst, perm):
    X1, X0, v = inst
    perm = [p for p in perm if p < X0.shape[1]]
    a = solve_simplex_wls(X1, X0, v)
    b = solve_simplex_wls(X1, X0[:, perm], v)
    scale = 1 + ((X1[:, None] - X0) ** 2 * v[:, None]).sum(axis=0).max()
    assert abs(a.objective - b.objective) <= 1e-8 * scale
