"""Leave-one-out, in-time placebo and restricted-pool refits."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np

from .inference import map_jobs
from .panel import PanelDataset, StudySpec, build_predictor_matrices
from .qp import QpSolution, SimplexWeights
from .scm import PredictorWeights, SyntheticControlFit, fit_synthetic_control

__all__ = [
    "MIN_PRE_PLACEBO_PERIODS",
    "RobustnessReport",
    "in_time_placebo",
    "leave_one_out",
    "restricted_pool",
]

logger = logging.getLogger(__name__)

MIN_PRE_PLACEBO_PERIODS = 4
ACTIVE_WEIGHT = 1e-6


@dataclass(frozen=True)
class RobustnessReport:
    """One robustness variant compared with the baseline fit.

    An infeasible variant has ``fit=None`` and says why in ``note``.
    """

    label: str
    fit: SyntheticControlFit | None
    baseline: SyntheticControlFit
    note: str = ""

    @property
    def feasible(self) -> bool:
        return self.fit is not None

    @property
    def att_delta(self) -> float:
        return self.fit.att - self.baseline.att if self.fit else float("nan")

    @property
    def end_of_sample_delta_change(self) -> float:
        return self.fit.end_of_sample_delta - self.baseline.end_of_sample_delta if self.fit else float("nan")

    @property
    def pre_rmspe_delta(self) -> float:
        return self.fit.pre_rmspe - self.baseline.pre_rmspe if self.fit else float("nan")

    @property
    def weight_l1(self) -> float:
        """L1 distance between donor weight vectors, missing donors counted as 0."""
        if not self.fit:
            return float("nan")
        a, b = self.fit.donor_weights, self.baseline.donor_weights
        return float(sum(abs(a.get(u, 0.0) - b.get(u, 0.0)) for u in sorted(set(a) | set(b))))


def _frozen(baseline: SyntheticControlFit, freeze_v: bool):
    """(V, predictor scale) to reuse, or (None, None) to search V afresh."""
    if freeze_v:
        return baseline.predictor_weights, baseline.predictor_scale
    return None, None


def _refit(args) -> tuple[SyntheticControlFit | None, str]:
    data, spec, v, scale, seed, loose = args
    try:
        return fit_synthetic_control(data, spec, v, seed=seed, loose=loose, scale=scale), ""
    except Exception as exc:  # noqa: BLE001 - a failed variant is reported, not raised
        logger.warning("robustness refit failed: %s", exc)
        return None, f"infeasible: {exc}"


def leave_one_out(
    data: PanelDataset,
    spec: StudySpec,
    baseline: SyntheticControlFit,
    *,
    freeze_v: bool = False,
    drop: Sequence[str] | None = None,
    seed: int = 0,
    jobs: int = 1,
    loose: bool = False,
) -> list[RobustnessReport]:
    """Refit once per donor with positive baseline weight, dropping that donor.

    By default every refit searches V again; ``freeze_v`` reuses the
    baseline V. ``drop`` overrides the list of donors to leave out. Reports
    are sorted by |ATT change|, largest first.
    """
    v, scale = _frozen(baseline, freeze_v)
    if drop is None:
        dropped = [u for u, w in baseline.donor_weights.items() if w > ACTIVE_WEIGHT]
    else:
        dropped = list(drop)
        unknown = [u for u in dropped if u not in spec.donor_units]
        if unknown:
            raise ValueError(f"units not in the donor pool: {unknown}")
    tasks, labels, reports = [], [], []
    for unit in dropped:
        pool = [d for d in spec.donor_units if d != unit]
        if not pool:
            reports.append(RobustnessReport(f"loo:{unit}", None, baseline, "infeasible: empty donor pool"))
            continue
        tasks.append((data, spec.with_donors(pool), v, scale, seed, loose))
        labels.append(f"loo:{unit}")
    for label, (fit, note) in zip(labels, map_jobs(_refit_loo, tasks, jobs)):
        reports.append(RobustnessReport(label, fit, baseline, note))
    return sorted(reports, key=_rank_key)


def _refit_loo(args) -> tuple[SyntheticControlFit | None, str]:
    data, spec, v, scale, _, _ = args
    if len(spec.donor_units) == 1:
        return _single_donor_fit(data, spec, v, scale)
    return _refit(args)


def _single_donor_fit(data: PanelDataset, spec: StudySpec, v: PredictorWeights | None, scale: np.ndarray | None):
    """A one-donor pool: the only simplex point is W = (1)."""
    try:
        X1, X0, _, _ = build_predictor_matrices(data, spec)
        periods = data.periods_between(spec.t_start, spec.t_end)
        Y = data.outcome_matrix(spec.outcome, spec.units, periods)
    except Exception as exc:  # noqa: BLE001
        return None, f"infeasible: {exc}"
    w = SimplexWeights(np.ones(1))
    v = v or PredictorWeights(np.ones(len(spec.predictors)))
    if scale is None:
        scale = np.abs(X1 - X0[:, 0]) / 2
        scale[scale == 0] = 1.0
    r = (X1 - X0[:, 0]) / scale
    sol = QpSolution(w, float(r @ (v.v * r)), 0.0, 0, True)
    return (
        SyntheticControlFit(
            treated_unit=spec.treated_unit,
            donor_units=spec.donor_units,
            periods=np.asarray(periods),
            T0=spec.T0,
            observed=Y[:, 0].copy(),
            synthetic=Y[:, 1].copy(),
            gaps=Y[:, 0] - Y[:, 1],
            weights=w,
            predictor_weights=v,
            predictor_labels=tuple(p.label for p in spec.predictors),
            predictor_treated=X1,
            predictor_synthetic=X0[:, 0].copy(),
            solution=sol,
            predictor_scale=scale,
        ),
        "single-donor pool",
    )


def _rank_key(report: RobustnessReport) -> tuple:
    delta = abs(report.att_delta)
    return (not report.feasible, -delta if report.feasible else 0.0, report.label)


def in_time_spec(data: PanelDataset, spec: StudySpec, placebo_T0: int) -> StudySpec:
    """The study moved to a fictitious treatment date and cut at T0 - 1.

    Predictor ranges are clipped to periods before ``placebo_T0`` (lags at or
    after it are dropped) and the training window ends at least two periods
    before the placebo date so that validation keeps two periods.
    """
    if not spec.t_start < placebo_T0 < spec.T0:
        raise ValueError(f"placebo date {placebo_T0} must lie strictly between {spec.t_start} and {spec.T0}")
    pre = data.periods_between(spec.t_start, placebo_T0 - 1)
    if len(pre) < MIN_PRE_PLACEBO_PERIODS:
        raise ValueError(f"only {len(pre)} periods before {placebo_T0}, need {MIN_PRE_PLACEBO_PERIODS}")
    training_end = min(spec.training_end, pre[-3])
    predictors = []
    for p in spec.predictors:
        clipped = p.clipped(placebo_T0 - 1)
        if clipped is not None:
            predictors.append(clipped)
    predictors = [p for p in predictors if p.clipped(training_end) is not None]
    if not predictors:
        raise ValueError(f"no predictor has periods before {placebo_T0}")
    return replace(
        spec,
        T0=placebo_T0,
        t_end=data.periods_between(spec.t_start, spec.T0 - 1)[-1],
        training_end=training_end,
        predictors=tuple(predictors),
    )


def in_time_placebo(
    data: PanelDataset,
    spec: StudySpec,
    placebo_T0: int,
    baseline: SyntheticControlFit | None = None,
    *,
    seed: int = 0,
    loose: bool = False,
) -> RobustnessReport:
    """Refit pretending treatment started at ``placebo_T0``."""
    placebo = in_time_spec(data, spec, placebo_T0)
    if baseline is None:
        baseline = fit_synthetic_control(data, spec, seed=seed, loose=loose)
    fit = fit_synthetic_control(data, placebo, seed=seed, loose=loose)
    return RobustnessReport(f"in-time:{placebo_T0}", fit, baseline)


def restricted_pool(
    data: PanelDataset,
    spec: StudySpec,
    keep: list[str] | tuple[str, ...],
    baseline: SyntheticControlFit | None = None,
    *,
    label: str = "restricted",
    freeze_v: bool = False,
    seed: int = 0,
    loose: bool = False,
) -> RobustnessReport:
    """Refit with the donor pool cut down to ``keep`` (order follows the pool)."""
    unknown = [u for u in keep if u not in spec.donor_units]
    if unknown:
        raise ValueError(f"units not in the donor pool: {unknown}")
    if len(set(keep)) < 2:
        raise ValueError("a restricted pool needs at least 2 donors")
    if baseline is None:
        baseline = fit_synthetic_control(data, spec, seed=seed, loose=loose)
    pool = [d for d in spec.donor_units if d in set(keep)]
    v, scale = _frozen(baseline, freeze_v)
    fit = fit_synthetic_control(data, spec.with_donors(pool), v, seed=seed, loose=loose, scale=scale)
    return RobustnessReport(f"pool:{label}", fit, baseline)
