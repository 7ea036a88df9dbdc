"""YAML study configuration.

A study file looks like::

    panel: panel.csv                 # or a list of CSV files, merged
    time_varying_covariates: [trade] # periodic variables that are not outcomes
    composites:                      # optional first-principal-component outcomes
      - name: institutions
        indicators: [voice, stability, effectiveness, regulation, law, corruption]
        periods: [1996, 2021]
        anchor: law                  # optional, defaults to the first indicator
    study:
      treated: SYR
      donors: [ALB, ARG, ...]
      excluded:                      # units kept out of the pool, with reasons
        - {unit: JOR, reason: spillover-neighbor}
      outcome: gdp
      t_start: 1996
      training_end: 2004
      T0: 2011
      t_end: 2021
      predictors:
        - {kind: outcome-lag, name: gdp, period: 2000}
        - {kind: outcome-mean, name: gdp, periods: [1996, 2004]}
        - {kind: covariate, name: latitude}
        - {kind: covariate, name: trade, periods: [1996, 2004]}
    inference:                       # all optional
      mspe_inclusion_ratio: 1.0
      mspe_discard_ratio: 4.0
      sidedness: two-sided-absolute  # or one-sided-signed
      include_treated_in_denominator: false
    robustness:                      # all optional
      leave_one_out: true
      freeze_v: false
      in_time: [2005, 2007]
      restricted_pools:
        institutions: [ALB, ARG, ...]
    plot: true
    seed: 0

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .panel import (
    ExcludedUnit,
    InferenceSettings,
    PanelDataset,
    PanelSchema,
    PredictorDef,
    StudySpec,
    load_panel_csv,
)
from .transforms import CompositeSpec, add_composite_outcome

__all__ = ["ConfigError", "RobustnessConfig", "StudyConfig", "load_config", "load_panels"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RobustnessConfig:
    leave_one_out: bool = True
    freeze_v: bool = False
    in_time: tuple[int, ...] = ()
    restricted_pools: dict[str, tuple[str, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class StudyConfig:
    panel_paths: tuple[Path, ...]
    study: StudySpec
    schema: PanelSchema = PanelSchema()
    composites: tuple[CompositeSpec, ...] = ()
    robustness: RobustnessConfig = RobustnessConfig()
    plot: bool = True
    seed: int = 0
    digest: str = ""


def _require(section: dict, key: str, where: str) -> Any:
    if key not in section:
        raise ConfigError(f"{where}: missing key {key!r}")
    return section[key]


def _predictor(raw: dict, i: int) -> PredictorDef:
    if not isinstance(raw, dict):
        raise ConfigError(f"study.predictors[{i}]: expected a mapping")
    unknown = set(raw) - {"kind", "name", "period", "periods"}
    if unknown:
        raise ConfigError(f"study.predictors[{i}]: unknown keys {sorted(unknown)}")
    periods = raw.get("periods")
    try:
        return PredictorDef(
            kind=_require(raw, "kind", f"study.predictors[{i}]"),
            name=str(_require(raw, "name", f"study.predictors[{i}]")),
            period=None if raw.get("period") is None else int(raw["period"]),
            periods=None if periods is None else (int(periods[0]), int(periods[1])),
        )
    except (ValueError, TypeError, IndexError) as exc:
        raise ConfigError(f"study.predictors[{i}]: {exc}") from None


def parse_config(raw: dict, base: Path, digest: str = "") -> StudyConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    panel = _require(raw, "panel", "config")
    paths = tuple(base / p for p in ([panel] if isinstance(panel, str) else panel))
    s = _require(raw, "study", "config")
    inf = raw.get("inference") or {}
    try:
        settings = InferenceSettings(
            mspe_inclusion_ratio=float(inf.get("mspe_inclusion_ratio", 1.0)),
            mspe_discard_ratio=float(inf.get("mspe_discard_ratio", 4.0)),
            sidedness=inf.get("sidedness", "two-sided-absolute"),
            include_treated_in_denominator=bool(inf.get("include_treated_in_denominator", False)),
        )
        excluded = tuple(
            ExcludedUnit(str(e["unit"]), str(e.get("reason", "excluded"))) if isinstance(e, dict) else ExcludedUnit(str(e))
            for e in s.get("excluded", [])
        )
        study = StudySpec(
            treated_unit=str(_require(s, "treated", "study")),
            donor_units=tuple(str(d) for d in _require(s, "donors", "study")),
            outcome=str(_require(s, "outcome", "study")),
            t_start=int(_require(s, "t_start", "study")),
            training_end=int(_require(s, "training_end", "study")),
            T0=int(_require(s, "T0", "study")),
            t_end=int(_require(s, "t_end", "study")),
            predictors=tuple(_predictor(p, i) for i, p in enumerate(_require(s, "predictors", "study"))),
            excluded_units=excluded,
            inference=settings,
        )
        composites = tuple(
            CompositeSpec(
                indicators=tuple(c["indicators"]),
                periods=(int(c["periods"][0]), int(c["periods"][1])),
                anchor=c.get("anchor"),
                name=str(c["name"]),
            )
            for c in raw.get("composites", [])
        )
        rob = raw.get("robustness") or {}
        robustness = RobustnessConfig(
            leave_one_out=bool(rob.get("leave_one_out", True)),
            freeze_v=bool(rob.get("freeze_v", False)),
            in_time=tuple(int(t) for t in rob.get("in_time", [])),
            restricted_pools={str(k): tuple(str(u) for u in v) for k, v in (rob.get("restricted_pools") or {}).items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config: {exc}") from None
    return StudyConfig(
        panel_paths=paths,
        study=study,
        schema=PanelSchema(time_varying_covariates=frozenset(raw.get("time_varying_covariates", []))),
        composites=composites,
        robustness=robustness,
        plot=bool(raw.get("plot", True)),
        seed=int(raw.get("seed", 0)),
        digest=digest,
    )


def load_config(path: str | Path) -> StudyConfig:
    path = Path(path)
    text = path.read_bytes()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw, path.parent, hashlib.sha256(text).hexdigest())


def load_panels(config: StudyConfig) -> PanelDataset:
    """Load and merge the panel files, then add composite outcomes."""
    data = None
    for path in config.panel_paths:
        part = load_panel_csv(path, config.schema)
        data = part if data is None else _merge(data, part)
    for composite in config.composites:
        data = add_composite_outcome(data, composite)
    return data


def _merge(a: PanelDataset, b: PanelDataset) -> PanelDataset:
    for store in ("outcomes", "covariates", "tv_covariates"):
        clash = set(getattr(a, store)) & set(getattr(b, store))
        if clash:
            raise ConfigError(f"panel files overlap on {sorted(clash)[:3]}")
    return PanelDataset(
        units=tuple(dict.fromkeys(a.units + b.units)),
        periods=tuple(sorted(set(a.periods) | set(b.periods))),
        outcomes={**a.outcomes, **b.outcomes},
        covariates={**a.covariates, **b.covariates},
        tv_covariates={**a.tv_covariates, **b.tv_covariates},
    )
