"""Aggregated results of simulation studies and out-of-sample backtests.

Both report types are registered artifacts, so they persist as structured
text and reload field-for-field.  CSV exports mirror the tables the study
drivers print: one row per model, one column per accuracy metric or
portfolio statistic, with model-confidence-set p-values alongside.
"""

import os
from dataclasses import dataclass, field

from .data_io import register_artifact, write_curve_csv, write_table_csv
from .errors import DataError

METRIC_KEYS = ("d_e", "d_f", "d_s", "d_b")
PORTFOLIO_FAMILIES = ("gmvp", "rpp")
EQUAL_WEIGHT_LABEL = "1/p"


def _float_map(d):
    return {k: (None if v is None else float(v)) for k, v in d.items()}


def _check_unique(models):
    if len(models) != len(set(models)):
        raise DataError("model labels must be unique within a report")


@register_artifact("study_report", 1)
@dataclass
class StudyReport:
    """Per-model accuracy averages from a simulation study.

    ``metrics[label][key]`` is the across-batch average of the per-batch mean
    distance (``None`` when the model failed); ``batch_values`` keeps the
    per-batch means so the averages are auditable; ``excluded`` counts
    distance evaluations dropped for singular forecasts.  ``mcs`` maps each
    metric to the confidence-set summary over the non-failed models.
    """

    dgp: str
    p: int
    t: int
    batches: int
    seed0: int
    models: list
    metrics: dict
    batch_values: dict
    excluded: dict
    mcs: dict
    failures: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_unique(self.models)
        for name, table in (("metrics", self.metrics), ("batch_values", self.batch_values)):
            if set(table) != set(self.models):
                raise DataError(f"study report {name} must cover every model exactly once")

    def to_payload(self) -> dict:
        return {
            "dgp": self.dgp,
            "p": int(self.p),
            "t": int(self.t),
            "batches": int(self.batches),
            "seed0": int(self.seed0),
            "models": list(self.models),
            "metrics": {k: _float_map(v) for k, v in self.metrics.items()},
            "batch_values": {
                k: {m: [float(x) for x in vals] for m, vals in v.items()}
                for k, v in self.batch_values.items()
            },
            "excluded": {k: {m: int(c) for m, c in v.items()} for k, v in self.excluded.items()},
            "mcs": self.mcs,
            "failures": dict(self.failures),
            "options": dict(self.options),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "StudyReport":
        return cls(**payload)


@register_artifact("eval_report", 1)
@dataclass
class EvalReport:
    """Out-of-sample backtest summary: accuracy and portfolio performance.

    ``portfolios[family][label]`` holds annualized ``avg``/``sd``/``ir``;
    the equal-weight benchmark appears in the portfolio families only.
    ``daily_returns`` keeps the realized portfolio return series so reports
    can emit plot data.
    """

    t_star: int
    n_out: int
    models: list
    distance_means: dict
    distance_excluded: dict
    distance_mcs: dict
    portfolios: dict
    portfolio_mcs: dict
    daily_returns: dict
    failures: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_unique(self.models)
        if set(self.distance_means) != set(self.models):
            raise DataError("evaluation report distances must cover every model exactly once")

    def to_payload(self) -> dict:
        return {
            "t_star": int(self.t_star),
            "n_out": int(self.n_out),
            "models": list(self.models),
            "distance_means": {k: _float_map(v) for k, v in self.distance_means.items()},
            "distance_excluded": {
                k: {m: int(c) for m, c in v.items()} for k, v in self.distance_excluded.items()
            },
            "distance_mcs": self.distance_mcs,
            "portfolios": {
                fam: {k: _float_map(v) for k, v in table.items()}
                for fam, table in self.portfolios.items()
            },
            "portfolio_mcs": self.portfolio_mcs,
            "daily_returns": {
                fam: {k: [float(x) for x in vals] for k, vals in table.items()}
                for fam, table in self.daily_returns.items()
            },
            "failures": dict(self.failures),
            "options": dict(self.options),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "EvalReport":
        return cls(**payload)


# ---------------------------------------------------------------------------
# CSV table layouts.
# ---------------------------------------------------------------------------


def _mcs_cell(mcs_entry, label):
    if not mcs_entry:
        return ""
    p_values = mcs_entry.get("p_values", {})
    return float(p_values[label]) if label in p_values else ""


def study_table(report: StudyReport):
    """Header and rows for the simulation-study table (one row per model)."""
    header = ["model", *METRIC_KEYS, *[f"mcs_{k}" for k in METRIC_KEYS], "status"]
    rows = []
    for label in report.models:
        if label in report.failures:
            rows.append([label] + [""] * 8 + [f"failed: {report.failures[label]}"])
            continue
        means = report.metrics[label]
        row = [label]
        row += [float("nan") if means[k] is None else float(means[k]) for k in METRIC_KEYS]
        row += [_mcs_cell(report.mcs.get(k), label) for k in METRIC_KEYS]
        row.append("ok")
        rows.append(row)
    return header, rows


def eval_distance_table(report: EvalReport):
    """Header and rows for the out-of-sample accuracy table."""
    header = ["model", *METRIC_KEYS, *[f"excluded_{k}" for k in METRIC_KEYS],
              *[f"mcs_{k}" for k in METRIC_KEYS], "status"]
    rows = []
    for label in report.models:
        if label in report.failures:
            rows.append([label] + [""] * 12 + [f"failed: {report.failures[label]}"])
            continue
        means = report.distance_means[label]
        excl = report.distance_excluded.get(label, {})
        row = [label]
        row += [float("nan") if means[k] is None else float(means[k]) for k in METRIC_KEYS]
        row += [str(int(excl.get(k, 0))) for k in METRIC_KEYS]
        row += [_mcs_cell(report.distance_mcs.get(k), label) for k in METRIC_KEYS]
        row.append("ok")
        rows.append(row)
    return header, rows


def eval_portfolio_table(report: EvalReport, family: str):
    """Header and rows for one portfolio family (AVG, SD, IR, MCS p)."""
    if family not in report.portfolios:
        raise DataError(f"report has no portfolio family {family!r}")
    header = ["model", "avg", "sd", "ir", "mcs_p", "status"]
    table = report.portfolios[family]
    mcs_entry = report.portfolio_mcs.get(family, {})
    labels = [EQUAL_WEIGHT_LABEL] + [m for m in report.models]
    rows = []
    for label in labels:
        if label in report.failures:
            rows.append([label, "", "", "", "", f"failed: {report.failures[label]}"])
            continue
        stats = table[label]
        rows.append([
            label,
            float(stats["avg"]),
            float(stats["sd"]),
            float(stats["ir"]),
            _mcs_cell(mcs_entry, label),
            "ok",
        ])
    return header, rows


def write_study_tables(report: StudyReport, out_dir, plot_data: bool = False) -> list:
    """Write the study CSV (and optional per-metric plot files); return paths."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    path = os.path.join(out_dir, "study.csv")
    header, rows = study_table(report)
    write_table_csv(path, header, rows)
    files.append(path)
    if plot_data:
        for metric in METRIC_KEYS:
            for label in report.models:
                if label in report.failures:
                    continue
                vals = report.batch_values[label][metric]
                pairs = [(i, v) for i, v in enumerate(vals)]
                fname = f"plot_{metric}_{_safe_name(label)}.csv"
                ppath = os.path.join(out_dir, fname)
                write_curve_csv(ppath, pairs, header=("batch", metric))
                files.append(ppath)
    return files


def write_eval_tables(report: EvalReport, out_dir, plot_data: bool = False) -> list:
    """Write accuracy and portfolio CSVs (and optional plot files)."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    path = os.path.join(out_dir, "distances.csv")
    header, rows = eval_distance_table(report)
    write_table_csv(path, header, rows)
    files.append(path)
    for family in PORTFOLIO_FAMILIES:
        if family not in report.portfolios:
            continue
        path = os.path.join(out_dir, f"{family}.csv")
        header, rows = eval_portfolio_table(report, family)
        write_table_csv(path, header, rows)
        files.append(path)
        if plot_data:
            for label, series in report.daily_returns.get(family, {}).items():
                cum = 0.0
                pairs = []
                for i, r in enumerate(series):
                    cum += r
                    pairs.append((i, cum))
                fname = f"plot_{family}_{_safe_name(label)}.csv"
                ppath = os.path.join(out_dir, fname)
                write_curve_csv(ppath, pairs, header=("day", "cumulative_return"))
                files.append(ppath)
    return files


def _safe_name(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label)
