"""Report files written by the command line tool.

All CSV files use ``\\n`` line endings and write floats with ``repr`` so
they round-trip exactly. File layouts:

``weights.csv``
    ``unit,weight``; one row per donor in pool order, zero weights included.
``gaps.csv``
    ``period,observed,synthetic,gap`` over [t_start, t_end].
``balance.csv``
    ``predictor,v_weight,treated,synthetic,donor_mean`` in raw units.
``pvalues.csv``
    ``period,p,numerator,denominator`` for each post-treatment period.
``placebo_gaps.csv``
    ``unit,period,gap,included``; the treated unit first, then placebos.
``exclusions.csv``
    ``unit,reason,pre_rmspe`` for every placebo left out of the reference set.
``robustness/<label>.json`` and ``robustness/ranking.csv``
    One file per variant and a table sorted by |ATT change|.
``summary.json``
    Sorted-key JSON. The only non-reproducible value is
    ``metadata.generated_at``.
``plot.svg``
    Observed and synthetic paths, written with fixed SVG ids and no date.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
from pathlib import Path

import numpy as np

from .inference import PlaceboEnsemble, PValueSeries
from .robustness import RobustnessReport
from .scm import SyntheticControlFit

__all__ = [
    "fit_summary",
    "write_balance",
    "write_gaps",
    "write_placebos",
    "write_plot",
    "write_robustness",
    "write_summary",
    "write_weights",
]


def _num(x: float) -> str:
    return repr(float(x))


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_weights(fit: SyntheticControlFit, path: Path) -> None:
    _write_rows(path, ["unit", "weight"], [(u, _num(w)) for u, w in zip(fit.donor_units, fit.weights.w)])


def write_gaps(fit: SyntheticControlFit, path: Path) -> None:
    rows = zip(fit.periods.tolist(), map(_num, fit.observed), map(_num, fit.synthetic), map(_num, fit.gaps))
    _write_rows(path, ["period", "observed", "synthetic", "gap"], rows)


def write_balance(fit: SyntheticControlFit, donor_means: np.ndarray, path: Path) -> None:
    rows = [
        (label, _num(v), _num(t), _num(s), _num(m))
        for label, v, t, s, m in zip(
            fit.predictor_labels, fit.predictor_weights.v, fit.predictor_treated, fit.predictor_synthetic, donor_means
        )
    ]
    _write_rows(path, ["predictor", "v_weight", "treated", "synthetic", "donor_mean"], rows)


def write_placebos(ensemble: PlaceboEnsemble, pvalues: PValueSeries | None, out: Path) -> None:
    if pvalues is not None:
        rows = zip(pvalues.periods.tolist(), map(_num, pvalues.p), pvalues.numerator.tolist(), [pvalues.denominator] * len(pvalues.p))
        _write_rows(out / "pvalues.csv", ["period", "p", "numerator", "denominator"], rows)
    treated = ensemble.treated
    rows = [(treated.treated_unit, t, _num(g), "treated") for t, g in zip(treated.periods.tolist(), treated.gaps)]
    for p in ensemble.placebos:
        if p.gaps is None:
            continue
        flag = "0" if p.excluded else "1"
        rows.extend((p.unit, t, _num(g), flag) for t, g in zip(p.periods.tolist(), p.gaps))
    _write_rows(out / "placebo_gaps.csv", ["unit", "period", "gap", "included"], rows)
    rows = [(p.unit, p.exclusion_reason, _num(p.pre_rmspe)) for p in ensemble.placebos if p.excluded]
    _write_rows(out / "exclusions.csv", ["unit", "reason", "pre_rmspe"], rows)


def fit_summary(fit: SyntheticControlFit) -> dict:
    return {
        "treated_unit": fit.treated_unit,
        "T0": fit.T0,
        "end_of_sample_delta": fit.end_of_sample_delta,
        "pre_rmspe": fit.pre_rmspe,
        "att": fit.att,
        "donor_weights": fit.donor_weights,
        "predictor_weights": dict(zip(fit.predictor_labels, fit.predictor_weights.v.tolist())),
        "solver": {
            "objective": fit.solution.objective,
            "kkt_residual": fit.solution.kkt_residual,
            "iterations": fit.solution.iterations,
            "non_unique_hint": fit.solution.non_unique_hint,
        },
    }


def _report_entry(report: RobustnessReport) -> dict:
    entry = {"label": report.label, "feasible": report.feasible, "note": report.note}
    if report.fit is not None:
        entry.update(
            fit_summary(report.fit),
            att_delta=report.att_delta,
            end_of_sample_delta_change=report.end_of_sample_delta_change,
            pre_rmspe_delta=report.pre_rmspe_delta,
            weight_l1=report.weight_l1,
        )
    return entry


def _file_label(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def write_robustness(reports: list[RobustnessReport], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for report in reports:
        _write_json(out / f"{_file_label(report.label)}.json", _report_entry(report))
    ranked = sorted(reports, key=lambda r: (not r.feasible, -abs(r.att_delta) if r.feasible else 0.0, r.label))
    rows = []
    for rank, r in enumerate(ranked, 1):
        if r.feasible:
            nums = [_num(x) for x in (r.fit.att, r.att_delta, r.end_of_sample_delta_change, r.pre_rmspe_delta, r.weight_l1)]
        else:
            nums = [""] * 5
        rows.append([rank, r.label, "1" if r.feasible else "0", *nums, r.note])
    header = ["rank", "label", "feasible", "att", "att_delta", "end_of_sample_delta_change", "pre_rmspe_delta", "weight_l1", "note"]
    _write_rows(out / "ranking.csv", header, rows)


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_summary(path: Path, body: dict, *, config_hash: str, seed: int) -> None:
    stamp = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()
    _write_json(path, {**body, "config_hash": config_hash, "seed": seed, "metadata": {"generated_at": stamp}})


def write_plot(fit: SyntheticControlFit, path: Path, outcome: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "synthcontrol", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(fit.periods, fit.observed, color="black", label=fit.treated_unit)
        ax.plot(fit.periods, fit.synthetic, color="black", linestyle="--", label=f"synthetic {fit.treated_unit}")
        ax.axvline(fit.T0, color="grey", linestyle=":")
        ax.set_xlabel("period")
        ax.set_ylabel(outcome)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
