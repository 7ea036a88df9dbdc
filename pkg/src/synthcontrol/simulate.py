"""Latent factor model panels with a known treatment effect.

    Y[i, t] = eta[t] + pi[t] . Z[i] + mu[t] . phi[i] + sigma * eps[i, t]

with eps i.i.d. standard normal, plus ``effect[t]`` added to the first
unit for t >= T0. Covariates Z are stored as time-invariant covariates
``z1, z2, ...`` so studies can match on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .panel import PanelDataset

__all__ = ["FactorModelSpec", "random_factor_model", "simulate_factor_model"]


@dataclass(frozen=True)
class FactorModelSpec:
    """Parameters of a simulated panel.

    Shapes: eta (T,), pi (T, r), Z (N, r), mu (T, F), phi (N, F). ``effect``
    is a scalar or a length-T array; it only applies from ``T0`` onward.
    """

    periods: tuple[int, ...]
    units: tuple[str, ...]
    T0: int
    eta: np.ndarray
    pi: np.ndarray
    Z: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    sigma: float = 0.0
    effect: float | np.ndarray = 0.0
    seed: int = 0
    outcome: str = "y"

    def __post_init__(self) -> None:
        T, N = len(self.periods), len(self.units)
        eta, pi, Z, mu, phi = (np.asarray(a, dtype=np.float64) for a in (self.eta, self.pi, self.Z, self.mu, self.phi))
        if eta.shape != (T,):
            raise ValueError(f"eta must have shape ({T},), got {eta.shape}")
        if pi.ndim != 2 or Z.ndim != 2 or pi.shape[0] != T or Z.shape[0] != N or pi.shape[1] != Z.shape[1]:
            raise ValueError(f"inconsistent covariate shapes pi {pi.shape}, Z {Z.shape}")
        if mu.ndim != 2 or phi.ndim != 2 or mu.shape[0] != T or phi.shape[0] != N or mu.shape[1] != phi.shape[1]:
            raise ValueError(f"inconsistent factor shapes mu {mu.shape}, phi {phi.shape}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if np.ndim(self.effect) not in (0, 1) or (np.ndim(self.effect) == 1 and len(self.effect) != T):
            raise ValueError("effect must be a scalar or one value per period")
        for name, arr in zip(("eta", "pi", "Z", "mu", "phi"), (eta, pi, Z, mu, phi)):
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "periods", tuple(int(p) for p in self.periods))
        object.__setattr__(self, "units", tuple(self.units))

    def effect_path(self) -> np.ndarray:
        delta = np.broadcast_to(np.asarray(self.effect, dtype=np.float64), (len(self.periods),)).copy()
        delta[np.asarray(self.periods) < self.T0] = 0.0
        return delta

    def expected_outcomes(self) -> np.ndarray:
        """Noise-free outcome array of shape (N, T), treatment effect included."""
        Y = self.eta[None, :] + self.Z @ self.pi.T + self.phi @ self.mu.T
        Y[0] += self.effect_path()
        return Y


def simulate_factor_model(spec: FactorModelSpec) -> PanelDataset:
    rng = np.random.default_rng(spec.seed)
    Y = spec.expected_outcomes()
    if spec.sigma > 0:
        Y = Y + spec.sigma * rng.standard_normal(Y.shape)
    outcomes = {
        (unit, period, spec.outcome): float(Y[i, t])
        for i, unit in enumerate(spec.units)
        for t, period in enumerate(spec.periods)
    }
    covariates = {
        (unit, f"z{c + 1}"): float(spec.Z[i, c]) for i, unit in enumerate(spec.units) for c in range(spec.Z.shape[1])
    }
    return PanelDataset(units=spec.units, periods=spec.periods, outcomes=outcomes, covariates=covariates)


def random_factor_model(
    *,
    n_donors: int = 50,
    n_pre: int = 15,
    n_post: int = 10,
    n_factors: int = 2,
    n_covariates: int = 1,
    sigma: float = 0.0,
    effect: float = 0.0,
    seed: int = 0,
    first_period: int = 1,
    treated_in_hull: bool = True,
    hull_size: int = 5,
    clone_of: int | None = None,
) -> FactorModelSpec:
    """Draw a factor model from ``seed``.

    Unit ``u00`` is treated. With ``treated_in_hull`` its covariates and
    factor loadings are the average of ``hull_size`` randomly chosen donors,
    so they lie inside the donor convex hull. Otherwise the treated unit is
    drawn like any donor (the exchangeable null design).

    ``clone_of=j`` instead makes the treated unit an exact copy of donor
    ``u{j:02d}`` (before any effect and noise) and pushes that donor's
    loadings outside the hull of the other donors, so no other combination
    can reproduce it.

    Factors are i.i.d. standard normal per period; the common effect ``eta``
    carries a linear trend.
    """
    rng = np.random.default_rng(seed)
    T = n_pre + n_post
    N = n_donors + 1
    periods = tuple(range(first_period, first_period + T))
    units = tuple(f"u{i:02d}" for i in range(N))
    t = np.arange(T, dtype=np.float64)
    eta = 10.0 + 0.5 * t + rng.normal(scale=0.5, size=T)
    pi = rng.normal(size=(T, n_covariates))
    mu = rng.normal(size=(T, n_factors))
    Z = rng.normal(size=(N, n_covariates))
    phi = rng.normal(size=(N, n_factors))
    if clone_of is not None:
        if not 1 <= clone_of <= n_donors:
            raise ValueError(f"clone_of must name a donor in 1..{n_donors}")
        others = np.delete(np.arange(1, N), clone_of - 1)
        Z[clone_of] = Z[others].max(axis=0) + 1.0
        phi[clone_of] = phi[others].max(axis=0) + 1.0
        Z[0], phi[0] = Z[clone_of], phi[clone_of]
    elif treated_in_hull:
        chosen = rng.choice(np.arange(1, N), size=min(hull_size, n_donors), replace=False)
        Z[0] = Z[chosen].mean(axis=0)
        phi[0] = phi[chosen].mean(axis=0)
    return FactorModelSpec(
        periods=periods,
        units=units,
        T0=first_period + n_pre,
        eta=eta,
        pi=pi,
        Z=Z,
        mu=mu,
        phi=phi,
        sigma=sigma,
        effect=effect,
        seed=int(rng.integers(2**63 - 1)),
    )
