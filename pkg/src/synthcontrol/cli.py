"""Command line entry point: ``synthcontrol <command> --config FILE``.

Exit codes: 0 success, 1 invalid study (validation violations), 2 unreadable
config or data file, 3 weight solver failure, 4 empty placebo reference set.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import report
from .config import ConfigError, StudyConfig, load_config, load_panels
from .inference import InferenceError, empirical_p_values, run_in_space_placebos
from .panel import PanelDataset, PanelError, build_predictor_matrices, validate_study, write_panel_csv
from .robustness import RobustnessReport, in_time_placebo, leave_one_out, restricted_pool
from .scm import FitError, StudyValidationError, SyntheticControlFit, fit_synthetic_control
from .simulate import FactorModelSpec, random_factor_model, simulate_factor_model
from .transforms import ZeroVarianceError

logger = logging.getLogger("synthcontrol")

EXIT_INVALID = 1
EXIT_FILE = 2
EXIT_SOLVER = 3
EXIT_INFERENCE = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load(args) -> tuple[StudyConfig, PanelDataset]:
    try:
        config = load_config(args.config)
        data = load_panels(config)
    except (OSError, ConfigError, PanelError) as exc:
        raise CliError(f"error: {exc}", EXIT_FILE) from None
    return config, data


def _seed(args, config: StudyConfig) -> int:
    return config.seed if args.seed is None else args.seed


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fit(config: StudyConfig, data: PanelDataset, seed: int, loose: bool) -> SyntheticControlFit:
    try:
        return fit_synthetic_control(data, config.study, seed=seed, loose=loose)
    except StudyValidationError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None
    except FitError as exc:
        raise CliError(f"fit failed: {exc}", EXIT_SOLVER) from None
    except ZeroVarianceError as exc:
        raise CliError(f"fit failed: {exc}", EXIT_SOLVER) from None


def _write_fit(fit: SyntheticControlFit, config: StudyConfig, data: PanelDataset, out: Path) -> None:
    report.write_weights(fit, out / "weights.csv")
    report.write_gaps(fit, out / "gaps.csv")
    _, X0, _, _ = build_predictor_matrices(data, config.study)
    report.write_balance(fit, X0.mean(axis=1), out / "balance.csv")
    if config.plot:
        report.write_plot(fit, out / "plot.svg", config.study.outcome)


def cmd_validate(args) -> int:
    config, data = _load(args)
    violations = list(validate_study(data, config.study))
    for v in violations:
        print(v)
    print(f"{len(violations)} violations")
    return EXIT_INVALID if violations else 0


def cmd_fit(args) -> int:
    config, data = _load(args)
    seed = _seed(args, config)
    fit = _fit(config, data, seed, args.loose_feasibility)
    out = _out(args)
    _write_fit(fit, config, data, out)
    report.write_summary(out / "summary.json", {"fit": report.fit_summary(fit)}, config_hash=config.digest, seed=seed)
    print(
        f"{fit.treated_unit}: end-of-sample delta {fit.end_of_sample_delta:.6g}, "
        f"pre RMSPE {fit.pre_rmspe:.6g}, ATT {fit.att:.6g}"
    )
    return 0


def cmd_placebo(args) -> int:
    config, data = _load(args)
    seed = _seed(args, config)
    fit = _fit(config, data, seed, args.loose_feasibility)
    out = _out(args)
    _write_fit(fit, config, data, out)
    ensemble = run_in_space_placebos(
        data, config.study, treated_fit=fit, seed=seed, jobs=args.jobs, loose=args.loose_feasibility
    )
    try:
        pvalues = empirical_p_values(ensemble)
    except InferenceError as exc:
        report.write_placebos(ensemble, None, out)
        for p in ensemble.placebos:
            print(f"excluded {p.unit}: {p.exclusion_reason}")
        raise CliError(f"error: {exc}", EXIT_INFERENCE) from None
    report.write_placebos(ensemble, pvalues, out)
    body = {
        "fit": report.fit_summary(fit),
        "inference": {
            "end_of_sample_p": pvalues.end_of_sample_p,
            "denominator": pvalues.denominator,
            "p_values": dict(zip(map(str, pvalues.periods.tolist()), pvalues.p.tolist())),
            "excluded": {p.unit: p.exclusion_reason for p in ensemble.placebos if p.excluded},
        },
    }
    report.write_summary(out / "summary.json", body, config_hash=config.digest, seed=seed)
    for p in ensemble.placebos:
        if p.excluded:
            print(f"excluded {p.unit}: {p.exclusion_reason}")
    print(f"end-of-sample p = {pvalues.end_of_sample_p:.6g} ({int(pvalues.numerator[-1])}/{pvalues.denominator})")
    return 0


def cmd_robustness(args) -> int:
    config, data = _load(args)
    seed = _seed(args, config)
    loose = args.loose_feasibility
    spec = config.study
    fit = _fit(config, data, seed, loose)
    rob = config.robustness
    reports: list[RobustnessReport] = []
    if rob.leave_one_out:
        reports.extend(leave_one_out(data, spec, fit, freeze_v=rob.freeze_v, seed=seed, jobs=args.jobs, loose=loose))
    for t in rob.in_time:
        try:
            reports.append(in_time_placebo(data, spec, t, fit, seed=seed, loose=loose))
        except (ValueError, FitError) as exc:
            reports.append(RobustnessReport(f"in-time:{t}", None, fit, f"infeasible: {exc}"))
    for label, keep in rob.restricted_pools.items():
        try:
            reports.append(restricted_pool(data, spec, keep, fit, label=label, freeze_v=rob.freeze_v, seed=seed, loose=loose))
        except (ValueError, FitError) as exc:
            reports.append(RobustnessReport(f"pool:{label}", None, fit, f"infeasible: {exc}"))
    out = _out(args)
    report.write_robustness(reports, out / "robustness")
    body = {"fit": report.fit_summary(fit), "variants": [r.label for r in reports]}
    report.write_summary(out / "summary.json", body, config_hash=config.digest, seed=seed)
    for r in reports:
        status = f"att delta {r.att_delta:.6g}" if r.feasible else r.note
        print(f"{r.label}: {status}")
    return 0


SIMULATE_KEYS = {"random", "model", "study", "outcome"}


def _simulation_spec(raw: dict, seed: int | None) -> FactorModelSpec:
    """Build a factor model from a simulate file.

    Either ``random:`` with keyword arguments of ``random_factor_model`` or
    ``model:`` with explicit arrays (periods, units, T0, eta, pi, Z, mu, phi,
    and optional sigma, effect, seed).
    """
    if not isinstance(raw, dict) or set(raw) - SIMULATE_KEYS or ("random" in raw) == ("model" in raw):
        raise ValueError("simulate file needs exactly one of 'random' or 'model' (plus optional 'study', 'outcome')")
    if "random" in raw:
        kwargs = dict(raw["random"] or {})
        if seed is not None:
            kwargs["seed"] = seed
        spec = random_factor_model(**kwargs)
    else:
        m = dict(raw["model"])
        if seed is not None:
            m["seed"] = seed
        m["effect"] = np.asarray(m["effect"], dtype=np.float64) if isinstance(m.get("effect"), list) else m.get("effect", 0.0)
        spec = FactorModelSpec(**m)
    if "outcome" in raw:
        spec = replace(spec, outcome=str(raw["outcome"]))
    return spec


def cmd_simulate(args) -> int:
    try:
        raw = yaml.safe_load(Path(args.config).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise CliError(f"error: {exc}", EXIT_FILE) from None
    try:
        spec = _simulation_spec(raw, args.seed)
        data = simulate_factor_model(spec)
    except (TypeError, ValueError, KeyError) as exc:
        raise CliError(f"error: bad simulation spec: {exc}", EXIT_INVALID) from None
    out = _out(args)
    write_panel_csv(data, out / "panel.csv")
    if raw.get("study"):
        study = {"panel": "panel.csv", **raw["study"]}
        (out / "study.yaml").write_text(yaml.safe_dump(study, sort_keys=False, default_flow_style=None))
    print(f"wrote {len(data.units)} units x {len(data.periods)} periods to {out / 'panel.csv'}")
    return 0


COMMANDS = {
    "validate": (cmd_validate, "check a study against its panel"),
    "fit": (cmd_fit, "fit the synthetic control and write weights, gaps and summary"),
    "placebo": (cmd_placebo, "in-space placebo inference and p-values"),
    "robustness": (cmd_robustness, "leave-one-out, in-time and restricted-pool refits"),
    "simulate": (cmd_simulate, "write a factor-model panel (--config is the simulation file)"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthcontrol", description="Synthetic control studies from YAML configs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (func, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="study (or simulation) YAML file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="seed for the V search (default: config seed)")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes (default: all cores)")
        p.add_argument(
            "--loose-feasibility",
            action="store_true",
            help="accept weights within a 5%% KKT margin instead of the strict tolerance",
        )
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_FILE
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_FILE
    try:
        return args.func(args)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
