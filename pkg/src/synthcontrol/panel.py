"""Balanced panel data model, long-format CSV ingestion and study validation."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np

__all__ = [
    "ExcludedUnit",
    "InferenceSettings",
    "PanelDataset",
    "PanelError",
    "PanelSchema",
    "PredictorDef",
    "StudySpec",
    "ValidationReport",
    "Violation",
    "build_predictor_matrices",
    "load_panel_csv",
    "validate_study",
    "write_panel_csv",
]

logger = logging.getLogger(__name__)

PredictorKind = Literal["covariate", "outcome-lag", "outcome-mean"]
Sidedness = Literal["two-sided-absolute", "one-sided-signed"]


class PanelError(ValueError):
    """Malformed panel input or a lookup of a variable the panel lacks."""


@dataclass(frozen=True)
class PanelSchema:
    """Column roles of a long-format panel CSV.

    Rows with an empty period cell are time-invariant covariates. Rows with a
    period are outcomes unless the variable is listed in
    ``time_varying_covariates``.
    """

    unit: str = "unit"
    period: str = "period"
    variable: str = "variable"
    value: str = "value"
    time_varying_covariates: frozenset[str] = frozenset()


@dataclass(frozen=True)
class PanelDataset:
    units: tuple[str, ...]
    periods: tuple[int, ...]
    outcomes: Mapping[tuple[str, int, str], float]
    covariates: Mapping[tuple[str, str], float] = field(default_factory=dict)
    tv_covariates: Mapping[tuple[str, str, int], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.periods, self.periods[1:])):
            raise PanelError("periods must be strictly increasing")
        for store in (self.outcomes, self.covariates, self.tv_covariates):
            for key, value in store.items():
                if not math.isfinite(value):
                    raise PanelError(f"non-finite value stored for {key}")

    @property
    def outcome_names(self) -> set[str]:
        return {name for (_, _, name) in self.outcomes}

    @property
    def covariate_names(self) -> set[str]:
        return {name for (_, name) in self.covariates} | {name for (_, name, _) in self.tv_covariates}

    def periods_between(self, first: int, last: int) -> list[int]:
        """Dataset periods in the closed range [first, last]."""
        return [p for p in self.periods if first <= p <= last]

    def series_value(self, unit: str, name: str, period: int) -> float | None:
        """Value of a periodic variable, looked up among outcomes then covariates."""
        value = self.outcomes.get((unit, period, name))
        if value is None:
            value = self.tv_covariates.get((unit, name, period))
        return value

    def outcome_matrix(self, name: str, units: Sequence[str], periods: Sequence[int]) -> np.ndarray:
        """Outcome values as a (len(periods), len(units)) array."""
        out = np.empty((len(periods), len(units)))
        for j, unit in enumerate(units):
            for i, period in enumerate(periods):
                value = self.outcomes.get((unit, period, name))
                if value is None:
                    raise PanelError(f"missing outcome {name!r} for unit {unit!r} at period {period}")
                out[i, j] = value
        return out

    def with_outcome(self, name: str, values: Mapping[tuple[str, int], float]) -> PanelDataset:
        """Copy of the dataset with an extra outcome series ``name``."""
        if name in self.outcome_names:
            raise PanelError(f"outcome {name!r} already exists")
        outcomes = dict(self.outcomes)
        for (unit, period), value in values.items():
            outcomes[(unit, period, name)] = float(value)
        periods = tuple(sorted(set(self.periods) | {p for (_, p) in values}))
        return replace(self, outcomes=outcomes, periods=periods)


@dataclass(frozen=True)
class PredictorDef:
    """One matching variable.

    ``period`` is the benchmark year of an outcome lag. ``periods`` is an
    inclusive (first, last) range for outcome means and for averaging a
    time-varying covariate; a covariate without ``periods`` is time-invariant.
    """

    kind: PredictorKind
    name: str
    period: int | None = None
    periods: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("covariate", "outcome-lag", "outcome-mean"):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.kind == "outcome-lag" and self.period is None:
            raise ValueError("outcome-lag predictor needs a period")
        if self.kind == "outcome-mean" and self.periods is None:
            raise ValueError("outcome-mean predictor needs a period range")
        if self.periods is not None and self.periods[0] > self.periods[1]:
            raise ValueError(f"empty period range {self.periods}")

    @property
    def label(self) -> str:
        if self.kind == "outcome-lag":
            return f"{self.name}@{self.period}"
        if self.kind == "outcome-mean":
            return f"mean({self.name},{self.periods[0]}-{self.periods[1]})"
        if self.periods is not None:
            return f"mean({self.name},{self.periods[0]}-{self.periods[1]})"
        return self.name

    def referenced_periods(self) -> tuple[int, int] | None:
        if self.period is not None:
            return (self.period, self.period)
        return self.periods

    def clipped(self, last: int) -> PredictorDef | None:
        """The predictor restricted to periods <= ``last``; None if nothing remains."""
        span = self.referenced_periods()
        if span is None:
            return self
        if span[0] > last:
            return None
        if self.kind == "outcome-lag":
            return self
        return replace(self, periods=(span[0], min(span[1], last)))


@dataclass(frozen=True)
class InferenceSettings:
    mspe_inclusion_ratio: float = 1.0
    mspe_discard_ratio: float = 4.0
    sidedness: Sidedness = "two-sided-absolute"
    include_treated_in_denominator: bool = False

    def __post_init__(self) -> None:
        if not 0 < self.mspe_inclusion_ratio <= self.mspe_discard_ratio:
            raise ValueError("need 0 < mspe_inclusion_ratio <= mspe_discard_ratio")
        if self.sidedness not in ("two-sided-absolute", "one-sided-signed"):
            raise ValueError(f"unknown sidedness {self.sidedness!r}")


@dataclass(frozen=True)
class ExcludedUnit:
    unit: str
    reason: str = "spillover-neighbor"


@dataclass(frozen=True)
class StudySpec:
    """A synthetic control study on one outcome.

    Training covers [t_start, training_end], validation (training_end, T0),
    the treatment runs from T0 through t_end.
    """

    treated_unit: str
    donor_units: tuple[str, ...]
    outcome: str
    t_start: int
    training_end: int
    T0: int
    t_end: int
    predictors: tuple[PredictorDef, ...]
    excluded_units: tuple[ExcludedUnit, ...] = ()
    inference: InferenceSettings = InferenceSettings()

    def __post_init__(self) -> None:
        object.__setattr__(self, "donor_units", tuple(self.donor_units))
        object.__setattr__(self, "predictors", tuple(self.predictors))
        object.__setattr__(self, "excluded_units", tuple(self.excluded_units))

    @property
    def units(self) -> tuple[str, ...]:
        return (self.treated_unit, *self.donor_units)

    def with_donors(self, donors: Sequence[str]) -> StudySpec:
        return replace(self, donor_units=tuple(donors))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def _parse_number(text: str, what: str, row: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise PanelError(f"row {row}: malformed {what} {text!r}") from None
    if not math.isfinite(value):
        raise PanelError(f"row {row}: non-finite {what} {text!r}")
    return value


def load_panel_csv(path: str | Path, schema: PanelSchema | None = None) -> PanelDataset:
    """Read a long-format ``unit,period,variable,value`` CSV.

    Row numbers in error messages count the header as row 1.
    """
    schema = schema or PanelSchema()
    path = Path(path)
    outcomes: dict[tuple[str, int, str], float] = {}
    covariates: dict[tuple[str, str], float] = {}
    tv_covariates: dict[tuple[str, str, int], float] = {}
    units: dict[str, None] = {}
    periods: set[int] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        columns = (schema.unit, schema.period, schema.variable, schema.value)
        if reader.fieldnames is None:
            raise PanelError(f"{path}: no data rows")
        missing = [c for c in columns if c not in reader.fieldnames]
        if missing:
            raise PanelError(f"{path}: schema columns missing from header: {missing}")
        n_rows = 0
        for row_no, row in enumerate(reader, start=2):
            n_rows += 1
            unit = row[schema.unit].strip()
            variable = row[schema.variable].strip()
            if not unit or not variable:
                raise PanelError(f"row {row_no}: empty unit or variable")
            value = _parse_number(row[schema.value].strip(), "value", row_no)
            period_text = (row[schema.period] or "").strip()
            units.setdefault(unit)
            if not period_text:
                key = (unit, variable)
                if key in covariates:
                    raise PanelError(f"row {row_no}: duplicate key {key}")
                covariates[key] = value
                continue
            try:
                period = int(period_text)
            except ValueError:
                raise PanelError(f"row {row_no}: unparseable period {period_text!r}") from None
            periods.add(period)
            if variable in schema.time_varying_covariates:
                tkey = (unit, variable, period)
                if tkey in tv_covariates:
                    raise PanelError(f"row {row_no}: duplicate key {tkey}")
                tv_covariates[tkey] = value
            else:
                okey = (unit, period, variable)
                if okey in outcomes:
                    raise PanelError(f"row {row_no}: duplicate key {okey}")
                outcomes[okey] = value
    if n_rows == 0:
        raise PanelError(f"{path}: no data rows")
    return PanelDataset(
        units=tuple(units),
        periods=tuple(sorted(periods)),
        outcomes=outcomes,
        covariates=covariates,
        tv_covariates=tv_covariates,
    )


def write_panel_csv(data: PanelDataset, path: str | Path) -> None:
    """Write ``data`` in the format read by :func:`load_panel_csv`.

    Values are written with ``repr`` so they round-trip exactly.
    """
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["unit", "period", "variable", "value"])
        for (unit, period, name), value in data.outcomes.items():
            writer.writerow([unit, period, name, repr(float(value))])
        for (unit, name, period), value in data.tv_covariates.items():
            writer.writerow([unit, period, name, repr(float(value))])
        for (unit, name), value in data.covariates.items():
            writer.writerow([unit, "", name, repr(float(value))])


def validate_study(data: PanelDataset, spec: StudySpec) -> ValidationReport:
    """Collect every problem with running ``spec`` on ``data``."""
    out: list[Violation] = []

    def add(code: str, message: str) -> None:
        out.append(Violation(code, message))

    if not spec.t_start < spec.training_end < spec.T0 <= spec.t_end:
        add(
            "window-order",
            f"need t_start < training_end < T0 <= t_end, got "
            f"{spec.t_start}, {spec.training_end}, {spec.T0}, {spec.t_end}",
        )
    if spec.treated_unit in spec.donor_units:
        add("treated-in-pool", f"treated unit {spec.treated_unit!r} is in the donor pool")
    excluded = {e.unit: e.reason for e in spec.excluded_units}
    for donor in spec.donor_units:
        if donor in excluded:
            add("excluded-in-pool", f"excluded unit in donor pool: {donor!r} ({excluded[donor]})")
    seen: set[str] = set()
    for donor in spec.donor_units:
        if donor in seen:
            add("duplicate-donor", f"donor {donor!r} listed twice")
        seen.add(donor)
    if len(spec.donor_units) < 2:
        add("pool-size", f"need at least 2 donors, got {len(spec.donor_units)}")
    known_units = set(data.units)
    for unit in spec.units:
        if unit not in known_units:
            add("unknown-unit", f"unit {unit!r} not in panel")

    if spec.outcome not in data.outcome_names:
        add("missing-variable", f"outcome {spec.outcome!r} not in panel")
    else:
        for unit in spec.units:
            if unit not in known_units:
                continue
            for period in data.periods_between(spec.t_start, spec.t_end):
                if (unit, period, spec.outcome) not in data.outcomes:
                    add("unbalanced", f"unbalanced panel: {unit}, {period}")
        n_val = len(data.periods_between(spec.training_end + 1, spec.T0 - 1))
        if n_val < 2:
            add("validation-window", f"validation window has {n_val} periods, need at least 2")
        if not data.periods_between(spec.T0, spec.t_end):
            add("post-window", "no post-treatment periods in panel")

    if not spec.predictors:
        add("no-predictors", "study has no predictors")
    for pred in spec.predictors:
        span = pred.referenced_periods()
        if span is not None:
            if span[0] < spec.t_start or span[1] >= spec.T0:
                add("predictor-window", f"predictor {pred.label} references periods outside [t_start, T0)")
            if span[0] > spec.training_end:
                add("predictor-window", f"predictor {pred.label} has no period inside the training window")
        if pred.kind == "covariate":
            if pred.name not in data.covariate_names and pred.name not in data.outcome_names:
                add("missing-variable", f"predictor covariate {pred.name!r} not in panel")
                continue
            for unit in spec.units:
                if unit in known_units and _covariate_value(data, unit, pred, warn=False) is None:
                    add("missing-variable", f"covariate {pred.name!r} missing for unit {unit!r}")
        elif pred.name not in data.outcome_names:
            add("missing-variable", f"predictor outcome {pred.name!r} not in panel")
        elif pred.name != spec.outcome:
            first, last = span
            for unit in spec.units:
                if unit not in known_units:
                    continue
                for period in data.periods_between(first, last):
                    if (unit, period, pred.name) not in data.outcomes:
                        add("unbalanced", f"unbalanced panel: {unit}, {period} ({pred.name})")
    return ValidationReport(tuple(out))


def _covariate_value(data: PanelDataset, unit: str, pred: PredictorDef, warn: bool = True) -> float | None:
    if pred.periods is None:
        return data.covariates.get((unit, pred.name))
    first, last = pred.periods
    values = []
    wanted = data.periods_between(first, last)
    for period in wanted:
        value = data.series_value(unit, pred.name, period)
        if value is not None:
            values.append(value)
    if not values:
        return None
    if warn and len(values) < len(wanted):
        logger.warning(
            "covariate %s for %s averaged over %d of %d periods", pred.name, unit, len(values), len(wanted)
        )
    return float(np.mean(values))


def predictor_values(data: PanelDataset, pred: PredictorDef, units: Sequence[str]) -> np.ndarray:
    """Raw values of one predictor for ``units``."""
    out = np.empty(len(units))
    for j, unit in enumerate(units):
        if pred.kind == "covariate":
            value = _covariate_value(data, unit, pred)
            if value is None:
                raise PanelError(f"missing covariate {pred.name!r} for unit {unit!r}")
        elif pred.kind == "outcome-lag":
            value = data.outcomes.get((unit, pred.period, pred.name))
            if value is None:
                raise PanelError(f"missing outcome {pred.name!r} for unit {unit!r} at {pred.period}")
        else:
            periods = data.periods_between(*pred.periods)
            if not periods:
                raise PanelError(f"no panel periods inside {pred.label}")
            value = float(np.mean(data.outcome_matrix(pred.name, [unit], periods)))
        out[j] = value
    return out


def build_predictor_matrices(
    data: PanelDataset,
    spec: StudySpec,
    *,
    through: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Assemble (X1, X0, Y1pre, Y0pre) for ``spec``.

    Rows of X follow ``spec.predictors``; columns of X0 and Y0pre follow
    ``spec.donor_units``. Y covers the panel periods in [t_start, T0).

    With ``through`` set, predictor period ranges are clipped to periods
    <= ``through`` (used to build the training-window matrices); a
    predictor left without periods raises.
    """
    predictors = spec.predictors
    if through is not None:
        clipped = [p.clipped(through) for p in predictors]
        if any(p is None for p in clipped):
            bad = [p.label for p, c in zip(predictors, clipped) if c is None]
            raise PanelError(f"predictors without periods up to {through}: {bad}")
        predictors = tuple(clipped)
    units = spec.units
    X = np.vstack([predictor_values(data, p, units) for p in predictors])
    pre = data.periods_between(spec.t_start, spec.T0 - 1)
    Y = data.outcome_matrix(spec.outcome, units, pre)
    return X[:, 0].copy(), X[:, 1:].copy(), Y[:, 0].copy(), Y[:, 1:].copy()
