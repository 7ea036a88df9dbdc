"""In-space placebo inference.

Every donor in turn plays the treated unit, with the remaining donors as
its pool (the real treated unit never enters a placebo pool). Placebos
whose pre-treatment RMSPE is large relative to the treated fit are
excluded before p-values are computed.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .panel import ExcludedUnit, InferenceSettings, PanelDataset, StudySpec
from .scm import SyntheticControlFit, fit_synthetic_control

__all__ = [
    "InferenceError",
    "PValueSeries",
    "PlaceboEnsemble",
    "PlaceboFit",
    "apply_mspe_filters",
    "empirical_p_values",
    "run_in_space_placebos",
]

logger = logging.getLogger(__name__)


class InferenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlaceboFit:
    unit: str
    periods: np.ndarray | None
    gaps: np.ndarray | None
    pre_rmspe: float
    att: float
    excluded: bool = False
    exclusion_reason: str = ""

    def __post_init__(self) -> None:
        if self.excluded and not self.exclusion_reason:
            raise ValueError("an excluded placebo needs a reason")


@dataclass(frozen=True)
class PlaceboEnsemble:
    treated: SyntheticControlFit
    placebos: tuple[PlaceboFit, ...]
    settings: InferenceSettings

    @property
    def included(self) -> tuple[PlaceboFit, ...]:
        return tuple(p for p in self.placebos if not p.excluded)


@dataclass(frozen=True)
class PValueSeries:
    periods: np.ndarray
    p: np.ndarray
    numerator: np.ndarray
    denominator: int
    end_of_sample_p: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "end_of_sample_p", float(self.p[-1]))


def _ratio_tag(ratio: float) -> str:
    return f"mspe>{ratio:g}x"


def apply_mspe_filters(
    placebos: list[PlaceboFit] | tuple[PlaceboFit, ...],
    treated_rmspe: float,
    settings: InferenceSettings,
) -> tuple[PlaceboFit, ...]:
    """Mark placebos whose pre-treatment RMSPE is too large.

    The discard rule (default 4x the treated RMSPE) is checked first so its
    reason wins when both rules fire. Fit failures keep their reason.
    """
    out = []
    for p in placebos:
        if p.excluded:
            out.append(p)
        elif p.pre_rmspe > settings.mspe_discard_ratio * treated_rmspe:
            out.append(replace(p, excluded=True, exclusion_reason=_ratio_tag(settings.mspe_discard_ratio)))
        elif p.pre_rmspe > settings.mspe_inclusion_ratio * treated_rmspe:
            out.append(replace(p, excluded=True, exclusion_reason=_ratio_tag(settings.mspe_inclusion_ratio)))
        else:
            out.append(p)
    return tuple(out)


def placebo_spec(spec: StudySpec, unit: str) -> StudySpec:
    """``spec`` with ``unit`` treated and the real treated unit set aside."""
    donors = tuple(d for d in spec.donor_units if d != unit)
    excluded = (*spec.excluded_units, ExcludedUnit(spec.treated_unit, "treated"))
    return replace(spec, treated_unit=unit, donor_units=donors, excluded_units=excluded)


def _fit_placebo(args) -> PlaceboFit:
    data, spec, unit, seed, loose = args
    try:
        fit = fit_synthetic_control(data, placebo_spec(spec, unit), seed=seed, loose=loose)
    except Exception as exc:  # noqa: BLE001 - a failed placebo must not abort the ensemble
        logger.warning("placebo fit for %s failed: %s", unit, exc)
        return PlaceboFit(unit, None, None, float("nan"), float("nan"), True, "fit-failure")
    return PlaceboFit(unit, fit.periods, fit.gaps, fit.pre_rmspe, fit.att)


def map_jobs(func, tasks: list, jobs: int = 1) -> list:
    """``[func(t) for t in tasks]``, in a process pool when ``jobs > 1``."""
    if jobs <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, tasks))


def run_in_space_placebos(
    data: PanelDataset,
    spec: StudySpec,
    *,
    treated_fit: SyntheticControlFit | None = None,
    seed: int = 0,
    jobs: int = 1,
    loose: bool = False,
) -> PlaceboEnsemble:
    """Refit the full pipeline with every donor as pseudo-treated."""
    if treated_fit is None:
        treated_fit = fit_synthetic_control(data, spec, seed=seed, loose=loose)
    tasks = [(data, spec, unit, seed, loose) for unit in sorted(spec.donor_units)]
    placebos = map_jobs(_fit_placebo, tasks, jobs)
    filtered = apply_mspe_filters(placebos, treated_fit.pre_rmspe, spec.inference)
    return PlaceboEnsemble(treated=treated_fit, placebos=filtered, settings=spec.inference)


def empirical_p_values(ensemble: PlaceboEnsemble, settings: InferenceSettings | None = None) -> PValueSeries:
    """Share of retained placebos with a gap at least as large as the treated gap.

    Two-sided comparison uses absolute gaps. One-sided comparison counts
    placebo gaps at least as extreme in the direction of the treated gap.
    With ``include_treated_in_denominator`` the treated unit counts in both
    numerator and denominator.
    """
    settings = settings or ensemble.settings
    if settings != ensemble.settings:
        ensemble = replace(
            ensemble,
            placebos=apply_mspe_filters(
                [replace(p, excluded=False, exclusion_reason="") if p.exclusion_reason != "fit-failure" else p
                 for p in ensemble.placebos],
                ensemble.treated.pre_rmspe,
                settings,
            ),
            settings=settings,
        )
    included = ensemble.included
    if not included:
        reasons = sorted({p.exclusion_reason for p in ensemble.placebos})
        raise InferenceError(f"empty reference distribution (excluded by: {', '.join(reasons) or 'none'})")
    treated = ensemble.treated
    post = treated.periods >= treated.T0
    g1 = treated.gaps[post]
    G = np.vstack([p.gaps[post] for p in included])
    if settings.sidedness == "two-sided-absolute":
        hits = np.abs(G) >= np.abs(g1)
    else:
        hits = np.where(g1 < 0, G <= g1, G >= g1)
    numerator = hits.sum(axis=0)
    denominator = len(included)
    if settings.include_treated_in_denominator:
        numerator = numerator + 1
        denominator += 1
    return PValueSeries(
        periods=treated.periods[post],
        p=numerator / denominator,
        numerator=numerator,
        denominator=denominator,
    )
