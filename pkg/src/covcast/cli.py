"""Command-line front end for simulation studies, fits, forecasts and backtests.

Commands run the service handlers in process by default; ``--server URL``
posts the identical request bodies to a running HTTP instance instead.
Every command accepts ``--config FILE`` (a JSON object of request fields)
with explicit flags taking precedence.  Exit codes: 0 on success, 2 on
configuration errors, 3 on data errors.
"""

import json
import os
import sys

import click
import httpx
from pydantic import ValidationError

from . import __version__
from .errors import ConfigError, DataError
from .report import (
    EvalReport,
    PORTFOLIO_FAMILIES,
    StudyReport,
    eval_distance_table,
    eval_portfolio_table,
    study_table,
)
from .service import handlers
from .service.schemas import (
    BacktestRequest,
    BacktestResponse,
    BenchmarkRequest,
    BenchmarkResponse,
    FitRequest,
    FitResponse,
    ForecastRequest,
    ForecastResponse,
    ReportRequest,
    ReportResponse,
    SimulateRequest,
    SimulateResponse,
)

EXIT_CONFIG = 2
EXIT_DATA = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path):
    if not path:
        return {}
    if not os.path.exists(path):
        _fail(EXIT_CONFIG, f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        _fail(EXIT_CONFIG, f"{path}: invalid JSON config ({exc})")
    if not isinstance(doc, dict):
        _fail(EXIT_CONFIG, f"{path}: config must be a JSON object")
    return doc


def _merge(config: dict, overrides: dict) -> dict:
    merged = dict(config)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _parse_model_token(token: str) -> dict:
    """Parse a compact model flag: ``name`` or ``name:factors``."""
    name, _, factors = token.partition(":")
    spec = {"name": name.strip()}
    if factors:
        try:
            spec["n_factors"] = int(factors)
        except ValueError:
            raise ConfigError(f"bad model token {token!r}: factor count must be an integer")
    return spec


def _build_request(model_cls, merged: dict):
    try:
        return model_cls.model_validate(merged)
    except ValidationError as exc:
        lines = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigError(lines) from None


def _run(ctx, endpoint: str, request, handler, response_cls):
    server = ctx.obj.get("server")
    if not server:
        return handler(request)
    url = server.rstrip("/") + "/" + endpoint
    try:
        resp = httpx.post(url, json=request.model_dump(mode="json"), timeout=None)
    except httpx.HTTPError as exc:
        raise click.ClickException(f"server request failed: {exc}")
    if resp.status_code == 200:
        return response_cls.model_validate(resp.json())
    try:
        body = resp.json()
    except ValueError:
        body = {}
    message = body.get("message") or json.dumps(body.get("detail", resp.text))
    if resp.status_code == 422 or body.get("kind") == "config":
        raise ConfigError(message)
    if body.get("kind") == "data":
        raise DataError(message)
    raise click.ClickException(f"server error {resp.status_code}: {message}")


def _guarded(fn):
    try:
        return fn()
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))


def _print_table(header, rows):
    def fmt(cell):
        if isinstance(cell, float):
            return "nan" if cell != cell else f"{cell:.4g}"
        return str(cell)

    text = [[fmt(c) for c in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in text)) if text else len(h)
              for i, h in enumerate(header)]
    click.echo("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in text:
        click.echo("  ".join(c.ljust(w) for c, w in zip(row, widths)))


def _eval_flags(fn):
    fn = click.option("--b", "b", type=float, default=None,
                      help="Asymmetry order of the power distance (> 2).")(fn)
    fn = click.option("--proxy-blend", type=float, default=None,
                      help="Weight of the trailing window in the realized proxy.")(fn)
    fn = click.option("--proxy-window", type=int, default=None,
                      help="Trailing window length for the realized proxy.")(fn)
    fn = click.option("--mcs-alpha", type=float, default=None,
                      help="Confidence-set level.")(fn)
    fn = click.option("--mcs-reps", type=int, default=None,
                      help="Bootstrap replications for the confidence set.")(fn)
    fn = click.option("--mcs-block", type=int, default=None,
                      help="Bootstrap block length (default T^(1/3)).")(fn)
    fn = click.option("--mcs-seed", type=int, default=None,
                      help="Bootstrap seed.")(fn)
    return fn


def _collect_eval(config, b, proxy_blend, proxy_window, mcs_alpha, mcs_reps,
                  mcs_block, mcs_seed):
    eval_cfg = dict(config.get("eval", {}))
    overrides = {
        "b": b,
        "proxy_blend": proxy_blend,
        "proxy_window": proxy_window,
        "mcs_alpha": mcs_alpha,
        "mcs_reps": mcs_reps,
        "mcs_block": mcs_block,
        "mcs_seed": mcs_seed,
    }
    return _merge(eval_cfg, overrides)


@click.group()
@click.version_option(__version__)
@click.option("--server", envvar="COVCAST_SERVER", default=None,
              help="Base URL of a running service; commands post there instead "
                   "of running in process.")
@click.pass_context
def main(ctx, server):
    """Covariance forecasting toolkit: simulation studies, fits and backtests."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="JSON config file.")
@click.option("--dgp", type=str, default=None, help="Generator: dgp1, dgp2 or fmsv.")
@click.option("--p", type=int, default=None, help="Number of assets.")
@click.option("--t", type=int, default=None, help="Number of observations.")
@click.option("--seed", type=int, default=None, help="Base seed; batch b uses seed+b.")
@click.option("--batches", type=int, default=None, help="Number of independent batches.")
@click.option("--fmsv-factors", type=int, default=None, help="Factor count for the fmsv generator.")
@click.option("--out-dir", type=str, default=None, help="Output directory.")
@click.pass_context
def simulate(ctx, config_path, dgp, p, t, seed, batches, fmsv_factors, out_dir):
    """Write per-batch return panels and true covariance paths."""

    def go():
        merged = _merge(_load_config(config_path), {
            "dgp": dgp, "p": p, "t": t, "seed": seed, "batches": batches,
            "fmsv_factors": fmsv_factors, "out_dir": out_dir,
        })
        req = _build_request(SimulateRequest, merged)
        resp = _run(ctx, "simulate", req, handlers.handle_simulate, SimulateResponse)
        for f in resp.files:
            click.echo(f"batch {f.batch} (seed {f.seed}): {f.returns_path} {f.truth_path}")
        click.echo(f"manifest: {resp.manifest_path}")

    _guarded(go)


def _model_options(fn):
    fn = click.option("--model", "models", multiple=True,
                      help="Model token name[:factors]; repeat for several. "
                           "Overrides the config list.")(fn)
    return fn


def _models_from_flags(config, tokens):
    if tokens:
        return [_parse_model_token(tok) for tok in tokens]
    return config.get("models")


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="JSON config file.")
@click.option("--dgp", type=str, default=None, help="Generator: dgp1, dgp2 or fmsv.")
@click.option("--p", type=int, default=None, help="Number of assets.")
@click.option("--t", type=int, default=None, help="Number of observations.")
@click.option("--seed", type=int, default=None, help="Base seed; batch b uses seed+b.")
@click.option("--batches", type=int, default=None, help="Number of independent batches.")
@click.option("--fmsv-factors", type=int, default=None, help="Factor count for the fmsv generator.")
@click.option("--jobs", type=int, default=None, help="Worker processes for batches.")
@click.option("--report-path", type=str, default=None, help="Persist the study report here.")
@click.option("--tables-dir", type=str, default=None, help="Write CSV tables here.")
@click.option("--plot-data/--no-plot-data", default=None,
              help="Also write two-column plot files next to the tables.")
@_model_options
@_eval_flags
@click.pass_context
def benchmark(ctx, config_path, dgp, p, t, seed, batches, fmsv_factors, jobs,
              report_path, tables_dir, plot_data, models, b, proxy_blend,
              proxy_window, mcs_alpha, mcs_reps, mcs_block, mcs_seed):
    """Fit all configured models on simulated batches and rank their accuracy."""

    def go():
        config = _load_config(config_path)
        merged = _merge(config, {
            "dgp": dgp, "p": p, "t": t, "seed": seed, "batches": batches,
            "fmsv_factors": fmsv_factors, "jobs": jobs, "report_path": report_path,
            "tables_dir": tables_dir, "plot_data": plot_data,
            "models": _models_from_flags(config, models),
        })
        merged["eval"] = _collect_eval(config, b, proxy_blend, proxy_window,
                                       mcs_alpha, mcs_reps, mcs_block, mcs_seed)
        req = _build_request(BenchmarkRequest, merged)
        resp = _run(ctx, "benchmark", req, handlers.handle_benchmark, BenchmarkResponse)
        report = StudyReport.from_payload(resp.report)
        header, rows = study_table(report)
        _print_table(header, rows)
        for label, seconds in resp.runtimes.items():
            click.echo(f"runtime {label}: {seconds:.2f}s")
        if resp.report_path:
            click.echo(f"report: {resp.report_path}")
        for f in resp.files:
            click.echo(f"wrote: {f}")

    _guarded(go)


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="JSON config file.")
@click.option("--returns-csv", type=str, default=None, help="Input return panel CSV.")
@click.option("--split-ratio", type=float, default=None,
              help="In-sample share of the panel (0, 1).")
@click.option("--refit-every", type=int, default=None,
              help="Re-estimate every k holdout steps (0 = fit once).")
@click.option("--report-path", type=str, default=None, help="Persist the evaluation report here.")
@click.option("--tables-dir", type=str, default=None, help="Write CSV tables here.")
@click.option("--plot-data/--no-plot-data", default=None,
              help="Also write two-column plot files next to the tables.")
@_model_options
@_eval_flags
@click.pass_context
def backtest(ctx, config_path, returns_csv, split_ratio, refit_every, report_path,
             tables_dir, plot_data, models, b, proxy_blend, proxy_window,
             mcs_alpha, mcs_reps, mcs_block, mcs_seed):
    """Forecast one step ahead through a holdout and compare models."""

    def go():
        config = _load_config(config_path)
        merged = _merge(config, {
            "returns_csv": returns_csv, "split_ratio": split_ratio,
            "refit_every": refit_every, "report_path": report_path,
            "tables_dir": tables_dir, "plot_data": plot_data,
            "models": _models_from_flags(config, models),
        })
        merged["eval"] = _collect_eval(config, b, proxy_blend, proxy_window,
                                       mcs_alpha, mcs_reps, mcs_block, mcs_seed)
        req = _build_request(BacktestRequest, merged)
        resp = _run(ctx, "backtest", req, handlers.handle_backtest, BacktestResponse)
        report = EvalReport.from_payload(resp.report)
        click.echo(f"in-sample length {report.t_star}, holdout {report.n_out}")
        click.echo("forecast accuracy:")
        header, rows = eval_distance_table(report)
        _print_table(header, rows)
        for family in PORTFOLIO_FAMILIES:
            click.echo(f"{family} portfolios:")
            header, rows = eval_portfolio_table(report, family)
            _print_table(header, rows)
        for label, seconds in resp.runtimes.items():
            click.echo(f"runtime {label}: {seconds:.2f}s")
        if resp.report_path:
            click.echo(f"report: {resp.report_path}")
        for f in resp.files:
            click.echo(f"wrote: {f}")

    _guarded(go)


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="JSON config file.")
@click.option("--returns-csv", type=str, default=None, help="Input return panel CSV.")
@click.option("--model", "model_token", type=str, default=None,
              help="Model token name[:factors].")
@click.option("--q", type=int, default=None, help="Lag order of the volatility VAR.")
@click.option("--gamma", type=float, default=None, help="Adaptive-weight exponent.")
@click.option("--cv-ratio", type=float, default=None,
              help="Chronological split share for penalty selection.")
@click.option("--likelihood", type=str, default=None,
              help="Likelihood mode for correlation models: auto, full or composite.")
@click.option("--label", type=str, default=None, help="Display label for the model.")
@click.option("--out-path", type=str, default=None, help="Where to persist the fit artifact.")
@click.pass_context
def fit(ctx, config_path, returns_csv, model_token, q, gamma, cv_ratio,
        likelihood, label, out_path):
    """Estimate one model on a return panel and persist the fit."""

    def go():
        config = _load_config(config_path)
        model_cfg = dict(config.get("model", {}))
        if model_token:
            model_cfg.update(_parse_model_token(model_token))
        model_cfg = _merge(model_cfg, {
            "q": q, "gamma": gamma, "cv_ratio": cv_ratio,
            "likelihood": likelihood, "label": label,
        })
        merged = _merge(config, {"returns_csv": returns_csv, "out_path": out_path})
        if model_cfg:
            merged["model"] = model_cfg
        req = _build_request(FitRequest, merged)
        resp = _run(ctx, "fit", req, handlers.handle_fit, FitResponse)
        click.echo(f"fitted {resp.label} ({resp.schema_name}) -> {resp.out_path}")
        for key, value in resp.summary.items():
            click.echo(f"  {key}: {value}")

    _guarded(go)


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="JSON config file.")
@click.option("--model-path", type=str, default=None, help="Fit artifact to forecast from.")
@click.option("--returns-csv", type=str, default=None, help="Panel the forecasts extend.")
@click.option("--horizon", type=int, default=None, help="Steps past the panel end.")
@click.option("--lognormal-correction/--no-lognormal-correction", default=None,
              help="Add half the state prediction variance to log-volatilities.")
@click.option("--out-path", type=str, default=None, help="Persist the forecast path here.")
@click.option("--vech-csv", type=str, default=None, help="Also write stacked unique entries as CSV.")
@click.pass_context
def forecast(ctx, config_path, model_path, returns_csv, horizon,
             lognormal_correction, out_path, vech_csv):
    """Forecast covariance matrices past the end of a panel."""

    def go():
        merged = _merge(_load_config(config_path), {
            "model_path": model_path, "returns_csv": returns_csv, "horizon": horizon,
            "lognormal_correction": lognormal_correction, "out_path": out_path,
            "vech_csv": vech_csv,
        })
        req = _build_request(ForecastRequest, merged)
        resp = _run(ctx, "forecast", req, handlers.handle_forecast, ForecastResponse)
        click.echo(f"forecast horizon {resp.horizon}: {', '.join(resp.dates)}")
        if resp.out_path:
            click.echo(f"artifact: {resp.out_path}")
        if resp.vech_csv:
            click.echo(f"csv: {resp.vech_csv}")

    _guarded(go)


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="JSON config file.")
@click.option("--artifact-path", type=str, default=None, help="Stored report or forecast path.")
@click.option("--out-dir", type=str, default=None, help="Directory for the CSV tables.")
@click.option("--plot-data/--no-plot-data", default=None,
              help="Also write two-column plot files.")
@click.pass_context
def report(ctx, config_path, artifact_path, out_dir, plot_data):
    """Render a stored artifact as CSV tables."""

    def go():
        merged = _merge(_load_config(config_path), {
            "artifact_path": artifact_path, "out_dir": out_dir, "plot_data": plot_data,
        })
        req = _build_request(ReportRequest, merged)
        resp = _run(ctx, "report", req, handlers.handle_report, ReportResponse)
        for f in resp.files:
            click.echo(f"wrote: {f}")

    _guarded(go)


@main.command()
@click.option("--host", type=str, default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
