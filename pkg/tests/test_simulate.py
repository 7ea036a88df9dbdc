from __future__ import annotations

import numpy as np
import pytest

from synthcontrol import FactorModelSpec, random_factor_model, simulate_factor_model


def zero_loading_spec(**kw):
    T, N = 6, 4
    base = dict(
        periods=tuple(range(T)),
        units=tuple("abcd"),
        T0=3,
        eta=np.arange(T, dtype=float),
        pi=np.zeros((T, 1)),
        Z=np.ones((N, 1)),
        mu=np.ones((T, 2)),
        phi=np.zeros((N, 2)),
    )
    base.update(kw)
    return FactorModelSpec(**base)


def test_zero_loadings_identical_units():
    data = simulate_factor_model(zero_loading_spec())
    Y = data.outcome_matrix("y", data.units, data.periods)
    assert (Y == Y[:, :1]).all()
    np.testing.assert_array_equal(Y[:, 0], np.arange(6))


def test_effect_added_to_first_unit_from_T0():
    data = simulate_factor_model(zero_loading_spec(effect=-5.0))
    Y = data.outcome_matrix("y", data.units, data.periods)
    np.testing.assert_array_equal(Y[:, 0] - Y[:, 1], [0, 0, 0, -5, -5, -5])


def test_effect_path_array():
    spec = zero_loading_spec(effect=np.arange(6.0))
    np.testing.assert_array_equal(spec.effect_path(), [0, 0, 0, 3, 4, 5])


def test_seeded_noise_reproducible():
    a = simulate_factor_model(zero_loading_spec(sigma=1.0, seed=4))
    b = simulate_factor_model(zero_loading_spec(sigma=1.0, seed=4))
    c = simulate_factor_model(zero_loading_spec(sigma=1.0, seed=5))
    assert a.outcomes == b.outcomes
    assert a.outcomes != c.outcomes


def test_expected_outcomes_formula():
    spec = random_factor_model(n_donors=5, n_pre=4, n_post=2, seed=3, effect=2.0)
    Y = spec.eta[None, :] + spec.Z @ spec.pi.T + spec.phi @ spec.mu.T
    Y[0, 4:] += 2.0
    np.testing.assert_allclose(spec.expected_outcomes(), Y)
    data = simulate_factor_model(spec)
    np.testing.assert_array_equal(data.outcome_matrix("y", data.units, data.periods).T, spec.expected_outcomes())
    assert data.covariates[("u02", "z1")] == spec.Z[2, 0]


def test_hull_and_clone_constructions():
    spec = random_factor_model(n_donors=8, seed=1, hull_size=3)
    donors = spec.phi[1:]
    # average of three donors: one of the 3-subsets reproduces it
    from itertools import combinations

    assert any(np.allclose(donors[list(c)].mean(axis=0), spec.phi[0]) for c in combinations(range(8), 3))
    clone = random_factor_model(n_donors=8, seed=1, clone_of=4)
    np.testing.assert_array_equal(clone.phi[0], clone.phi[4])
    others = np.delete(clone.phi, [0, 4], axis=0)
    assert (clone.phi[4] > others.max(axis=0)).all()
    with pytest.raises(ValueError):
        random_factor_model(n_donors=8, clone_of=9)


def test_shape_validation():
    with pytest.raises(ValueError, match="eta"):
        zero_loading_spec(eta=np.zeros(5))
    with pytest.raises(ValueError, match="factor"):
        zero_loading_spec(phi=np.zeros((4, 3)))
    with pytest.raises(ValueError):
        zero_loading_spec(sigma=-1.0)
    with pytest.raises(ValueError):
        zero_loading_spec(effect=np.zeros(2))
