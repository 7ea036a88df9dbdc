"""Nested synthetic control estimator.

The inner problem fits donor weights W for given predictor weights V
(:func:`synthcontrol.qp.solve_simplex_wls`). The outer problem picks V to
minimize the outcome MSPE over the validation window when W is fit on
training-window predictors. The final W is refit on predictors over the
whole pre-treatment window with the chosen V.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .panel import PanelDataset, StudySpec, build_predictor_matrices, validate_study
from .qp import DEFAULT_TOL, LOOSE_TOL, QpSolution, SimplexWeights, _check_inputs, search_score, solve_simplex_wls
from .transforms import standardize_predictors

__all__ = [
    "FitError",
    "PredictorWeights",
    "StudyValidationError",
    "SyntheticControlFit",
    "compute_gap_series",
    "fit_synthetic_control",
    "optimize_predictor_weights",
]

logger = logging.getLogger(__name__)

N_RANDOM_STARTS = 4
# V-grid step by number of predictors; larger k relies on Nelder-Mead alone
GRID_STEPS = {2: 0.005, 3: 0.02}
MAXFEV_PER_DIM = 25


class StudyValidationError(ValueError):
    def __init__(self, report):
        self.report = report
        super().__init__("invalid study:\n" + "\n".join(str(v) for v in report))


class FitError(RuntimeError):
    """The weight solver did not converge; ``solution`` carries diagnostics."""

    def __init__(self, message: str, solution: QpSolution | None = None):
        self.solution = solution
        super().__init__(message)


@dataclass(frozen=True)
class PredictorWeights:
    v: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim != 1 or v.size == 0 or (v < 0).any() or not np.isfinite(v).all() or v.sum() <= 0:
            raise ValueError(f"invalid predictor weights {v}")
        v = v / v.sum()
        v.setflags(write=False)
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class SyntheticControlFit:
    treated_unit: str
    donor_units: tuple[str, ...]
    periods: np.ndarray
    T0: int
    observed: np.ndarray
    synthetic: np.ndarray
    gaps: np.ndarray
    weights: SimplexWeights
    predictor_weights: PredictorWeights
    predictor_labels: tuple[str, ...]
    predictor_treated: np.ndarray
    predictor_synthetic: np.ndarray
    solution: QpSolution
    predictor_scale: np.ndarray | None = None
    pre_rmspe: float = field(init=False)
    att: float = field(init=False)
    end_of_sample_delta: float = field(init=False)

    def __post_init__(self) -> None:
        pre = self.periods < self.T0
        object.__setattr__(self, "pre_rmspe", float(np.sqrt(np.mean(self.gaps[pre] ** 2))))
        object.__setattr__(self, "att", float(np.mean(self.gaps[~pre])))
        object.__setattr__(self, "end_of_sample_delta", float(self.gaps[-1]))

    @property
    def synthetic_path(self) -> dict[int, float]:
        return dict(zip(self.periods.tolist(), self.synthetic.tolist()))

    @property
    def gap_series(self) -> dict[int, float]:
        return dict(zip(self.periods.tolist(), self.gaps.tolist()))

    @property
    def donor_weights(self) -> dict[str, float]:
        return dict(zip(self.donor_units, self.weights.w.tolist()))

    @property
    def predictor_balance(self) -> list[tuple[str, float, float]]:
        return list(zip(self.predictor_labels, self.predictor_treated.tolist(), self.predictor_synthetic.tolist()))


def compute_gap_series(observed: dict[int, float], synthetic: dict[int, float]) -> dict[int, float]:
    """Pointwise observed minus synthetic over identical period domains."""
    if set(observed) != set(synthetic):
        raise ValueError("observed and synthetic series cover different periods")
    return {t: observed[t] - synthetic[t] for t in sorted(observed)}


def _softmax(u: np.ndarray) -> np.ndarray:
    z = np.exp(u - u.max())
    return z / z.sum()


def _simplex_grid(k: int, step: float) -> list[np.ndarray]:
    n = round(1 / step)
    points = []
    for head in itertools.product(range(n + 1), repeat=k - 1):
        rest = n - sum(head)
        if rest >= 0:
            points.append(np.array([*head, rest], dtype=np.float64) / n)
    return points


class _VSearch:
    """Validation MSPE of W(V) with W fit on standardized training predictors."""

    def __init__(self, data: PanelDataset, spec: StudySpec, tol: float, loose: bool):
        X1, X0, _, _ = build_predictor_matrices(data, spec, through=spec.training_end)
        labels = [p.label for p in spec.predictors]
        X1s, X0s, _ = standardize_predictors(X1, X0, labels)
        self.X1, self.X0, _ = _check_inputs(X1s, X0s, np.ones(len(X1s)))
        train = data.periods_between(spec.t_start, spec.training_end)
        val = data.periods_between(spec.training_end + 1, spec.T0 - 1)
        Yt = data.outcome_matrix(spec.outcome, spec.units, train)
        Yv = data.outcome_matrix(spec.outcome, spec.units, val)
        self.y1t, self.Y0t = Yt[:, 0].copy(), np.ascontiguousarray(Yt[:, 1:])
        self.y1v, self.Y0v = Yv[:, 0].copy(), np.ascontiguousarray(Yv[:, 1:])
        self.tol = LOOSE_TOL if loose else tol
        self.loose = loose
        self.cache: dict[tuple[float, ...], tuple[float, float]] = {}

    def score(self, v: np.ndarray) -> tuple[float, float]:
        key = tuple(v.tolist())
        hit = self.cache.get(key)
        if hit is None:
            val, train = search_score(self.X1, self.X0, v, self.tol, self.loose, self.y1t, self.Y0t, self.y1v, self.Y0v)
            hit = self.cache[key] = (val, train)
        return hit


def optimize_predictor_weights(
    data: PanelDataset,
    spec: StudySpec,
    *,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    loose: bool = False,
) -> PredictorWeights:
    """Choose V minimizing the validation-window MSPE.

    Nelder-Mead over a softmax parameterization (last coordinate pinned at
    zero), started from equal weights and ``N_RANDOM_STARTS`` seeded points.
    For k <= 3 every point of a grid over the V simplex (step 0.005 for
    k = 2, 0.02 for k = 3) is also scored and the best grid point seeds one more local search. The winner
    has the lowest validation MSPE, then the lowest training MSPE, then the
    lexicographically smallest V.
    """
    k = len(spec.predictors)
    if not data.periods_between(spec.training_end + 1, spec.T0 - 1):
        raise ValueError("validation window is empty")
    if k == 1:
        return PredictorWeights(np.ones(1))
    search = _VSearch(data, spec, tol, loose)
    candidates: list[np.ndarray] = []

    def objective(u: np.ndarray) -> float:
        return search.score(_softmax(np.append(u, 0.0)))[0]

    fatol = 1e-12 * max(search.score(np.full(k, 1.0 / k))[0], 1e-300)

    def local(u0: np.ndarray) -> None:
        res = minimize(
            objective,
            u0,
            method="Nelder-Mead",
            options={"xatol": 1e-5, "fatol": fatol, "maxfev": MAXFEV_PER_DIM * k, "adaptive": k > 3},
        )
        candidates.append(_softmax(np.append(res.x, 0.0)))

    rng = np.random.default_rng(seed)
    starts = [np.zeros(k - 1)] + [rng.normal(scale=2.0, size=k - 1) for _ in range(N_RANDOM_STARTS)]
    for u0 in starts:
        local(u0)
    if k in GRID_STEPS:
        grid = _simplex_grid(k, GRID_STEPS[k])
        candidates.extend(grid)
        best = min(grid, key=lambda v: (*search.score(v), tuple(v)))
        logv = np.log(np.maximum(best, 1e-8))
        local(logv[:-1] - logv[-1])
    v_best = min(candidates, key=lambda v: (*search.score(v), tuple(v)))
    return PredictorWeights(v_best)


def fit_synthetic_control(
    data: PanelDataset,
    spec: StudySpec,
    v: PredictorWeights | None = None,
    *,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    loose: bool = False,
    validate: bool = True,
    scale: np.ndarray | None = None,
) -> SyntheticControlFit:
    """Fit donor weights and build the synthetic path over [t_start, t_end].

    Predictors are z-scored across the treated unit and donors. Passing
    ``scale`` (usually another fit's ``predictor_scale``) divides by those
    standard deviations instead, so a refit on a different pool with the
    same V minimizes the same weighted distance.
    """
    if validate:
        report = validate_study(data, spec)
        if not report.ok:
            raise StudyValidationError(report)
    if v is None:
        v = optimize_predictor_weights(data, spec, seed=seed, tol=tol, loose=loose)
    elif len(v.v) != len(spec.predictors):
        raise ValueError(f"got {len(v.v)} predictor weights for {len(spec.predictors)} predictors")
    X1, X0, _, _ = build_predictor_matrices(data, spec)
    labels = tuple(p.label for p in spec.predictors)
    X1s, X0s, stats = standardize_predictors(X1, X0, labels)
    if scale is not None:
        scale = np.asarray(scale, dtype=np.float64)
        if scale.shape != stats.std.shape or not (scale > 0).all():
            raise ValueError("scale must hold one positive value per predictor")
        X1s = (X1 - stats.mean) / scale
        X0s = (X0 - stats.mean[:, None]) / scale[:, None]
    else:
        scale = stats.std
    sol = solve_simplex_wls(X1s, X0s, v.v, tol, loose=loose)
    if not sol.converged:
        raise FitError(
            f"weight solver did not converge for {spec.treated_unit!r}: "
            f"kkt residual {sol.kkt_residual:.3g} after {sol.iterations} iterations",
            sol,
        )
    w = sol.weights.w
    periods = data.periods_between(spec.t_start, spec.t_end)
    Y = data.outcome_matrix(spec.outcome, spec.units, periods)
    observed = Y[:, 0].copy()
    synthetic = Y[:, 1:] @ w
    return SyntheticControlFit(
        treated_unit=spec.treated_unit,
        donor_units=spec.donor_units,
        periods=np.asarray(periods),
        T0=spec.T0,
        observed=observed,
        synthetic=synthetic,
        gaps=observed - synthetic,
        weights=sol.weights,
        predictor_weights=v,
        predictor_labels=labels,
        predictor_treated=X1,
        predictor_synthetic=X0 @ w,
        solution=sol,
        predictor_scale=scale,
    )
