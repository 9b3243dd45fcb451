"""Orchestration behind the service endpoints and the command line.

Each handler takes one validated request model and returns one response
model.  They raise :class:`~covcast.errors.ConfigError` for bad
configuration and :class:`~covcast.errors.DataError` for bad inputs, which
the HTTP app and the CLI translate into status codes and exit codes.
"""

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .._linalg import vech_labels
from ..baselines import StaticCov, cov1para_shrinkage, sample_covariance
from ..data_io import (
    CovPath,
    ReturnsPanel,
    load_artifact,
    load_returns_csv,
    persist_artifact,
    split_sample,
    write_returns_csv,
    write_vech_csv,
)
from ..errors import ConfigError, CovcastError, DataError
from ..evaluate import (
    average_distances,
    build_portfolio,
    distances,
    gmvp_mcs_losses,
    gmvp_weights,
    mcs_test,
    realized_proxy,
    rpp_mcs_losses,
    rpp_weights,
)
from ..garch import (
    DccFit,
    FgarchFit,
    SbekkFit,
    dcc_cov_path,
    dcc_forecast,
    fgarch_cov_path,
    fgarch_forecast,
    fit_dcc,
    fit_fgarch,
    fit_sbekk,
    sbekk_cov_path,
    sbekk_forecast,
)
from ..msv import (
    FmsvModel,
    fit_fmsv,
    forecast_covariance,
    insample_covariance_path,
    onestep_covariance_path,
)
from ..report import (
    EQUAL_WEIGHT_LABEL,
    METRIC_KEYS,
    EvalReport,
    StudyReport,
    write_eval_tables,
    write_study_tables,
)
from ..simulate import generate
from .schemas import (
    BacktestRequest,
    BacktestResponse,
    BatchFiles,
    BenchmarkRequest,
    BenchmarkResponse,
    FitRequest,
    FitResponse,
    ForecastRequest,
    ForecastResponse,
    ModelSpec,
    ReportRequest,
    ReportResponse,
    SimulateRequest,
    SimulateResponse,
)

FIT_FAILURES = (CovcastError, np.linalg.LinAlgError)


# ---------------------------------------------------------------------------
# Model dispatch.
# ---------------------------------------------------------------------------


def fit_model(spec: ModelSpec, panel: ReturnsPanel):
    """Fit one configured model on a panel and return its artifact object."""
    if spec.name in ("fmsv", "fgarch") and spec.n_factors >= panel.n_assets:
        raise ConfigError(
            f"{spec.display_label()}: factor count {spec.n_factors} must be below p={panel.n_assets}"
        )
    if spec.name == "fmsv":
        return fit_fmsv(
            panel,
            spec.n_factors,
            q=spec.q,
            gamma=spec.gamma,
            cv_ratio=spec.cv_ratio,
            penalize_intercept=spec.penalize_intercept,
        )
    if spec.name == "dcc":
        return fit_dcc(panel, mode=spec.likelihood)
    if spec.name == "sbekk":
        return fit_sbekk(panel, mode=spec.likelihood)
    if spec.name == "fgarch":
        return fit_fgarch(panel, spec.n_factors)
    if spec.name == "sample":
        return StaticCov("sample", sample_covariance(panel), list(panel.assets))
    if spec.name == "cov1para":
        return StaticCov("cov1para", cov1para_shrinkage(panel), list(panel.assets))
    raise ConfigError(f"unknown model name {spec.name!r}")


def model_dimension(fitted) -> int:
    if isinstance(fitted, FmsvModel):
        return fitted.factor.loadings.shape[0]
    if isinstance(fitted, DccFit):
        return fitted.q_bar.shape[0]
    if isinstance(fitted, SbekkFit):
        return fitted.s_hat.shape[0]
    if isinstance(fitted, FgarchFit):
        return fitted.loadings.shape[0]
    if isinstance(fitted, StaticCov):
        return fitted.matrix.shape[0]
    raise ConfigError(f"artifact of type {type(fitted).__name__} is not a fitted model")


def insample_path(fitted, panel, lognormal_correction: bool = False) -> np.ndarray:
    """Fitted covariance matrices over the estimation panel, one per row."""
    if isinstance(fitted, FmsvModel):
        return insample_covariance_path(fitted, panel, lognormal_correction).matrices
    if isinstance(fitted, DccFit):
        return dcc_cov_path(fitted, panel).matrices
    if isinstance(fitted, SbekkFit):
        return sbekk_cov_path(fitted, panel).matrices
    if isinstance(fitted, FgarchFit):
        return fgarch_cov_path(fitted, panel).matrices
    if isinstance(fitted, StaticCov):
        return np.repeat(fitted.matrix[None], panel.n_obs, axis=0)
    raise ConfigError(f"artifact of type {type(fitted).__name__} is not a fitted model")


def onestep_path(fitted, panel, start: int) -> np.ndarray:
    """One-step-ahead forecasts for rows ``start..T-1`` with frozen parameters.

    The matrix for row ``t`` conditions only on observations before ``t``:
    recursions carry lagged data and the volatility filter uses predicted
    states.
    """
    if isinstance(fitted, FmsvModel):
        return onestep_covariance_path(fitted, panel, start).matrices
    if isinstance(fitted, StaticCov):
        return np.repeat(fitted.matrix[None], panel.n_obs - start, axis=0)
    return insample_path(fitted, panel)[start:]


def forecast_path(fitted, panel, horizon: int, lognormal_correction: bool = False) -> CovPath:
    """Covariance forecasts for steps ``1..horizon`` past the panel end."""
    if isinstance(fitted, FmsvModel):
        return forecast_covariance(fitted, panel, horizon, lognormal_correction)
    if isinstance(fitted, DccFit):
        return dcc_forecast(fitted, panel, horizon)
    if isinstance(fitted, SbekkFit):
        return sbekk_forecast(fitted, panel, horizon)
    if isinstance(fitted, FgarchFit):
        return fgarch_forecast(fitted, panel, horizon)
    if isinstance(fitted, StaticCov):
        last = panel.dates[-1]
        return CovPath(
            dates=[f"{last}+{l}" for l in range(1, horizon + 1)],
            assets=list(panel.assets),
            matrices=np.repeat(fitted.matrix[None], horizon, axis=0),
        )
    raise ConfigError(f"artifact of type {type(fitted).__name__} is not a fitted model")


def _fit_summary(fitted) -> dict:
    if isinstance(fitted, FmsvModel):
        return {
            "n_factors": fitted.factor.n_factors,
            "em_converged": bool(fitted.factor.converged),
            "lambda_star": float(fitted.msv.lambda_star),
            "split_r": float(fitted.msv.split_r),
            "split_clamped": bool(fitted.msv.split_clamped),
            "stabilized_eigs": int(fitted.msv.stabilization.n_replaced),
        }
    if isinstance(fitted, DccFit):
        return {"a": fitted.a, "b": fitted.b, "mode": fitted.mode, "loglik": fitted.loglik,
                "target_shrunk": bool(fitted.q_bar_shrunk)}
    if isinstance(fitted, SbekkFit):
        return {"a": fitted.a, "b": fitted.b, "mode": fitted.mode, "loglik": fitted.loglik}
    if isinstance(fitted, FgarchFit):
        return {"n_factors": fitted.n_factors,
                "fallback_fits": int(sum(g.fallback for g in fitted.factor_garch))}
    if isinstance(fitted, StaticCov):
        return {"method": fitted.method, "dimension": fitted.matrix.shape[0]}
    return {}


def _mcs_payload(res) -> dict:
    return {
        "p_values": {k: float(v) for k, v in res.p_values.items()},
        "retained": list(res.retained),
        "alpha": float(res.alpha),
        "statistic": res.statistic,
        "bootstrap": dict(res.bootstrap),
    }


def _mcs_over(columns: dict, eval_opts) -> dict:
    """Confidence set over per-observation loss columns keyed by label.

    Rows with a non-finite loss for any model are dropped; degenerate inputs
    (fewer than two models or two usable rows) yield an empty summary.
    """
    labels = list(columns)
    if len(labels) < 2:
        return {}
    losses = np.column_stack([np.asarray(columns[k], dtype=float) for k in labels])
    keep = np.all(np.isfinite(losses), axis=1)
    losses = losses[keep]
    if losses.shape[0] < 2:
        return {}
    res = mcs_test(
        losses,
        models=labels,
        alpha=eval_opts.mcs_alpha,
        reps=eval_opts.mcs_reps,
        block_len=eval_opts.mcs_block,
        seed=eval_opts.mcs_seed,
    )
    out = _mcs_payload(res)
    out["dropped_rows"] = int(np.size(keep) - np.count_nonzero(keep))
    return out


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def handle_simulate(req: SimulateRequest) -> SimulateResponse:
    """Write per-batch return panels and true covariance paths to disk."""
    os.makedirs(req.out_dir, exist_ok=True)
    files = []
    for batch in range(req.batches):
        seed = req.seed + batch
        sim = generate(req.dgp, req.p, req.t, seed, fmsv_factors=req.fmsv_factors)
        panel = sim.to_panel()
        returns_path = os.path.join(req.out_dir, f"returns_b{batch:03d}.csv")
        truth_path = os.path.join(req.out_dir, f"truth_b{batch:03d}.csv")
        write_returns_csv(panel, returns_path)
        write_vech_csv(truth_path, panel.dates, vech_labels(panel.assets), sim.true_cov)
        files.append(BatchFiles(batch=batch, seed=seed,
                                returns_path=returns_path, truth_path=truth_path))
    manifest_path = os.path.join(req.out_dir, "manifest.json")
    manifest = {
        "dgp": req.dgp,
        "p": req.p,
        "t": req.t,
        "seed0": req.seed,
        "batches": req.batches,
        "files": [f.model_dump() for f in files],
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    return SimulateResponse(dgp=req.dgp, p=req.p, t=req.t, batches=req.batches,
                            files=files, manifest_path=manifest_path)


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def _benchmark_batch(payload: dict, batch: int) -> dict:
    """Fit every configured model on one simulated batch; isolate failures."""
    req = BenchmarkRequest.model_validate(payload)
    sim = generate(req.dgp, req.p, req.t, req.seed + batch, fmsv_factors=req.fmsv_factors)
    panel = sim.to_panel()
    out = {}
    for spec in req.models:
        label = spec.display_label()
        t0 = time.perf_counter()
        try:
            fitted = fit_model(spec, panel)
            path = insample_path(fitted, panel, spec.lognormal_correction)
            sets = [distances(sim.true_cov[i], path[i], b=req.eval.b) for i in range(panel.n_obs)]
            mean_set, excluded = average_distances(sets)
            out[label] = {
                "means": mean_set.as_dict(),
                "excluded": excluded,
                "failure": None,
                "runtime": time.perf_counter() - t0,
            }
        except FIT_FAILURES as exc:
            out[label] = {
                "means": None,
                "excluded": 0,
                "failure": f"{type(exc).__name__}: {exc}",
                "runtime": time.perf_counter() - t0,
            }
    return out


def handle_benchmark(req: BenchmarkRequest) -> BenchmarkResponse:
    """Simulate batches, fit all models in-sample, compare to the truth."""
    payload = req.model_dump()
    if req.jobs > 1:
        with ProcessPoolExecutor(max_workers=req.jobs) as pool:
            batch_results = list(pool.map(_benchmark_batch, [payload] * req.batches,
                                          range(req.batches)))
    else:
        batch_results = [_benchmark_batch(payload, b) for b in range(req.batches)]

    labels = [spec.display_label() for spec in req.models]
    metrics, batch_values, excluded, failures, runtimes = {}, {}, {}, {}, {}
    for label in labels:
        runs = [res[label] for res in batch_results]
        runtimes[label] = float(sum(r["runtime"] for r in runs))
        failed = [r["failure"] for r in runs if r["failure"]]
        if failed:
            failures[label] = failed[0]
            metrics[label] = {k: None for k in METRIC_KEYS}
            batch_values[label] = {k: [] for k in METRIC_KEYS}
            excluded[label] = {k: 0 for k in METRIC_KEYS}
            continue
        per_metric = {k: [r["means"][k] for r in runs] for k in METRIC_KEYS}
        batch_values[label] = per_metric
        with np.errstate(invalid="ignore"):
            metrics[label] = {
                k: (float(np.mean(v)) if np.all(np.isfinite(v)) else None)
                for k, v in per_metric.items()
            }
        excluded[label] = {k: 0 for k in METRIC_KEYS}
        excluded[label]["d_s"] = int(sum(r["excluded"] for r in runs))

    mcs = {}
    for k in METRIC_KEYS:
        columns = {
            label: batch_values[label][k]
            for label in labels
            if label not in failures and np.all(np.isfinite(batch_values[label][k]))
        }
        mcs[k] = _mcs_over(columns, req.eval)

    report = StudyReport(
        dgp=req.dgp,
        p=req.p,
        t=req.t,
        batches=req.batches,
        seed0=req.seed,
        models=labels,
        metrics=metrics,
        batch_values=batch_values,
        excluded=excluded,
        mcs=mcs,
        failures=failures,
        options=req.eval.model_dump(),
    )
    files = []
    if req.report_path:
        persist_artifact(report, req.report_path)
    if req.tables_dir:
        files = write_study_tables(report, req.tables_dir, req.plot_data)
    return BenchmarkResponse(report=report.to_payload(), runtimes=runtimes,
                             report_path=req.report_path, files=files)


# ---------------------------------------------------------------------------
# backtest
# ---------------------------------------------------------------------------


def _truncate_panel(panel: ReturnsPanel, stop: int) -> ReturnsPanel:
    return ReturnsPanel(dates=list(panel.dates[:stop]), assets=list(panel.assets),
                        values=panel.values[:stop].copy())


def _oos_forecasts(spec: ModelSpec, panel: ReturnsPanel, t_star: int, refit_every: int):
    """One-step-ahead out-of-sample matrices for rows ``t_star..T-1``.

    With ``refit_every == 0`` parameters are estimated once on the in-sample
    window and recursions advance on observed data.  A positive value
    re-estimates every that-many steps on all data before the block.
    """
    n_obs = panel.n_obs
    if refit_every <= 0:
        fitted = fit_model(spec, _truncate_panel(panel, t_star))
        return onestep_path(fitted, panel, t_star)
    blocks = []
    for start in range(t_star, n_obs, refit_every):
        fitted = fit_model(spec, _truncate_panel(panel, start))
        stop = min(start + refit_every, n_obs)
        block = onestep_path(fitted, _truncate_panel(panel, stop), start)
        blocks.append(block)
    return np.concatenate(blocks, axis=0)


def handle_backtest(req: BacktestRequest) -> BacktestResponse:
    """Split a panel, forecast one step ahead through the holdout, evaluate."""
    panel = load_returns_csv(req.returns_csv)
    split = split_sample(panel, req.split_ratio)
    t_star = split.t_star
    n_out = panel.n_obs - t_star
    proxy = realized_proxy(panel.values, t_star, window=req.eval.proxy_window,
                           blend=req.eval.proxy_blend)
    oos_values = panel.values[t_star:]

    labels = [spec.display_label() for spec in req.models]
    distance_means, distance_excluded, failures, runtimes = {}, {}, {}, {}
    distance_series = {}
    portfolios = {"gmvp": {}, "rpp": {}}
    daily_returns = {"gmvp": {}, "rpp": {}}

    equal = np.full((n_out, panel.n_assets), 1.0 / panel.n_assets)
    for family in ("gmvp", "rpp"):
        result = build_portfolio(equal, oos_values)
        portfolios[family][EQUAL_WEIGHT_LABEL] = {
            "avg": result.avg, "sd": result.sd, "ir": result.ir,
        }
        daily_returns[family][EQUAL_WEIGHT_LABEL] = result.returns.tolist()

    for spec in req.models:
        label = spec.display_label()
        t0 = time.perf_counter()
        try:
            hats = _oos_forecasts(spec, panel, t_star, req.refit_every)
            sets = [distances(proxy[i], hats[i], b=req.eval.b) for i in range(n_out)]
            mean_set, excluded = average_distances(sets)
            distance_means[label] = mean_set.as_dict()
            distance_excluded[label] = {k: 0 for k in METRIC_KEYS}
            distance_excluded[label]["d_s"] = excluded
            distance_series[label] = {
                k: np.array([getattr(s, k) for s in sets]) for k in METRIC_KEYS
            }

            w_gmvp = np.array([gmvp_weights(h) for h in hats])
            rpp_rows, fallback_days = [], 0
            for h in hats:
                w, fb = rpp_weights(h)
                rpp_rows.append(w)
                fallback_days += int(fb)
            w_rpp = np.array(rpp_rows)
            for family, weights in (("gmvp", w_gmvp), ("rpp", w_rpp)):
                result = build_portfolio(weights, oos_values)
                stats = {"avg": result.avg, "sd": result.sd, "ir": result.ir}
                if family == "rpp":
                    stats["fallback_days"] = float(fallback_days)
                portfolios[family][label] = stats
                daily_returns[family][label] = result.returns.tolist()
        except FIT_FAILURES as exc:
            failures[label] = f"{type(exc).__name__}: {exc}"
            distance_means[label] = {k: None for k in METRIC_KEYS}
            distance_excluded[label] = {k: 0 for k in METRIC_KEYS}
        runtimes[label] = time.perf_counter() - t0

    distance_mcs = {}
    for k in METRIC_KEYS:
        columns = {
            label: distance_series[label][k]
            for label in labels
            if label in distance_series
        }
        distance_mcs[k] = _mcs_over(columns, req.eval)

    portfolio_mcs = {}
    for family, loss_fn in (("gmvp", gmvp_mcs_losses), ("rpp", rpp_mcs_losses)):
        table = daily_returns[family]
        cols = [EQUAL_WEIGHT_LABEL] + [m for m in labels if m in table]
        if len(cols) < 2:
            portfolio_mcs[family] = {}
            continue
        returns_mat = np.column_stack([table[c] for c in cols])
        losses = loss_fn(returns_mat)
        portfolio_mcs[family] = _mcs_over(
            {c: losses[:, i] for i, c in enumerate(cols)}, req.eval
        )

    report = EvalReport(
        t_star=t_star,
        n_out=n_out,
        models=labels,
        distance_means=distance_means,
        distance_excluded=distance_excluded,
        distance_mcs=distance_mcs,
        portfolios=portfolios,
        portfolio_mcs=portfolio_mcs,
        daily_returns=daily_returns,
        failures=failures,
        options={**req.eval.model_dump(), "split_ratio": req.split_ratio,
                 "refit_every": req.refit_every, "returns_csv": req.returns_csv},
    )
    files = []
    if req.report_path:
        persist_artifact(report, req.report_path)
    if req.tables_dir:
        files = write_eval_tables(report, req.tables_dir, req.plot_data)
    return BacktestResponse(report=report.to_payload(), runtimes=runtimes,
                            report_path=req.report_path, files=files)


# ---------------------------------------------------------------------------
# fit / forecast / report
# ---------------------------------------------------------------------------


def handle_fit(req: FitRequest) -> FitResponse:
    """Estimate one model on a CSV panel and persist the fit artifact."""
    panel = load_returns_csv(req.returns_csv)
    fitted = fit_model(req.model, panel)
    persist_artifact(fitted, req.out_path)
    return FitResponse(
        label=req.model.display_label(),
        schema_name=fitted.artifact_schema,
        out_path=req.out_path,
        summary=_fit_summary(fitted),
    )


def handle_forecast(req: ForecastRequest) -> ForecastResponse:
    """Load a fit artifact and forecast covariances past a panel's end."""
    fitted = load_artifact(req.model_path)
    panel = load_returns_csv(req.returns_csv)
    if model_dimension(fitted) != panel.n_assets:
        raise DataError(
            f"model dimension {model_dimension(fitted)} does not match panel width {panel.n_assets}"
        )
    path = forecast_path(fitted, panel, req.horizon, req.lognormal_correction)
    if req.out_path:
        persist_artifact(path, req.out_path)
    if req.vech_csv:
        write_vech_csv(req.vech_csv, path.dates, vech_labels(path.assets), path.matrices)
    return ForecastResponse(horizon=req.horizon, dates=list(path.dates),
                            assets=list(path.assets), out_path=req.out_path,
                            vech_csv=req.vech_csv)


def handle_report(req: ReportRequest) -> ReportResponse:
    """Render a persisted report or covariance path as CSV tables."""
    obj = load_artifact(req.artifact_path)
    if isinstance(obj, StudyReport):
        files = write_study_tables(obj, req.out_dir, req.plot_data)
    elif isinstance(obj, EvalReport):
        files = write_eval_tables(obj, req.out_dir, req.plot_data)
    elif isinstance(obj, CovPath):
        os.makedirs(req.out_dir, exist_ok=True)
        out = os.path.join(req.out_dir, "covariances.csv")
        write_vech_csv(out, obj.dates, vech_labels(obj.assets), obj.matrices)
        files = [out]
    else:
        raise ConfigError(
            f"artifact schema {getattr(obj, 'artifact_schema', '?')!r} has no tabular export"
        )
    return ReportResponse(schema_name=obj.artifact_schema, files=files)
