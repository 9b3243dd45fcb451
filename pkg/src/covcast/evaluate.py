"""Forecast evaluation: matrix distances, a realized-covariance proxy,
portfolio constructions with their summary statistics, and the model
confidence set.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._linalg import sym, vech
from .errors import DataError, NumericsError

TRADING_DAYS = 252.0
RPP_TOL = 1e-10
MCS_ALPHA = 0.10


@dataclass
class DistanceSet:
    """The four discrepancy measures between a truth and a forecast."""

    d_e: float
    d_f: float
    d_s: float
    d_b: float

    def as_dict(self) -> dict:
        return {"d_e": self.d_e, "d_f": self.d_f, "d_s": self.d_s, "d_b": self.d_b}


def _psd_power(a, power):
    w, v = np.linalg.eigh(sym(a))
    w = np.clip(w, 0.0, None)
    return (v * w**power) @ v.T


def distances(h_true, h_hat, b: float = 3.0) -> DistanceSet:
    """Distance set between covariance matrices.

    ``d_e`` sums squared vech differences (each off-diagonal once), ``d_f``
    is the squared Frobenius norm, ``d_s`` the Stein (entropy) loss and
    ``d_b`` an asymmetric power loss of order ``b`` that punishes
    under-prediction more than over-prediction.  A singular forecast makes
    ``d_s`` infinite; callers exclude such points from averages.
    """
    h = sym(np.asarray(h_true, dtype=float))
    g = sym(np.asarray(h_hat, dtype=float))
    if h.shape != g.shape:
        raise DataError("distance inputs must share a common shape")
    p = h.shape[0]
    diff = h - g
    d_e = float(vech(diff) @ vech(diff))
    d_f = float(np.sum(diff * diff))

    sign, logdet_g = np.linalg.slogdet(g)
    if sign <= 0.0:
        d_s = math.inf
    else:
        try:
            inv_g_h = np.linalg.solve(g, h)
        except np.linalg.LinAlgError:
            inv_g_h = None
        if inv_g_h is None or not np.all(np.isfinite(inv_g_h)):
            d_s = math.inf
        else:
            sign_h, logdet_h = np.linalg.slogdet(h)
            if sign_h <= 0.0:
                d_s = math.inf
            else:
                d_s = max(float(np.trace(inv_g_h)) - (logdet_h - logdet_g) - p, 0.0)

    if b <= 2.0:
        raise DataError(f"asymmetry order must exceed 2, got {b}")
    hb = _psd_power(h, b)
    gb = _psd_power(g, b)
    gbm1 = _psd_power(g, b - 1.0)
    d_b = float(
        np.trace(hb - gb) / (b * (b - 1.0)) - np.trace(gbm1 @ diff) / (b - 1.0)
    )
    return DistanceSet(d_e=d_e, d_f=d_f, d_s=d_s, d_b=d_b)


def average_distances(sets) -> tuple:
    """Per-metric means with infinite Stein values excluded (and counted)."""
    sets = list(sets)
    if not sets:
        raise DataError("cannot average an empty distance collection")
    d_e = float(np.mean([s.d_e for s in sets]))
    d_f = float(np.mean([s.d_f for s in sets]))
    d_b = float(np.mean([s.d_b for s in sets]))
    finite = [s.d_s for s in sets if math.isfinite(s.d_s)]
    excluded = len(sets) - len(finite)
    d_s = float(np.mean(finite)) if finite else math.inf
    return DistanceSet(d_e=d_e, d_f=d_f, d_s=d_s, d_b=d_b), excluded


def realized_proxy(values, t_star: int, window: int | None = None, blend: float = 0.01) -> np.ndarray:
    """Noise-reduced realized covariance proxy for out-of-sample rows.

    For each ``t >= t_star`` the proxy blends the day's outer product with a
    trailing-window average: ``(1 - blend) y_t y_t' + blend * mean of the
    last ``window`` outer products`` (window defaults to ``t_star``).
    """
    y = np.asarray(values, dtype=float)
    t_len = y.shape[0]
    win = t_star if window is None else int(window)
    if win < 1:
        raise DataError("proxy window must be positive")
    if t_star < win or t_star >= t_len:
        raise DataError("proxy needs t_star >= window and at least one later row")
    outers = y[:, :, None] * y[:, None, :]
    csum = np.cumsum(outers, axis=0)
    out = np.empty((t_len - t_star, y.shape[1], y.shape[1]))
    for t in range(t_star, t_len):
        window_sum = csum[t] - (csum[t - win] if t - win >= 0 else 0.0)
        out[t - t_star] = (1.0 - blend) * outers[t] + blend * window_sum / win
    return out


# ---------------------------------------------------------------------------
# Portfolio constructions.
# ---------------------------------------------------------------------------


def gmvp_weights(h_hat) -> np.ndarray:
    """Global minimum-variance weights ``inv(H) 1 / (1' inv(H) 1)``."""
    h = sym(np.asarray(h_hat, dtype=float))
    ones = np.ones(h.shape[0])
    try:
        x = np.linalg.solve(h, ones)
    except np.linalg.LinAlgError:
        raise DataError("covariance forecast is singular; GMVP undefined") from None
    if not np.all(np.isfinite(x)):
        raise DataError("covariance forecast is singular; GMVP undefined")
    return x / float(ones @ x)


def _rpp_residual(w, h, c):
    return w * (h @ w) - c


def rpp_weights(h_hat, c: float = 1.0, tol: float = RPP_TOL, max_iter: int = 200):
    """Risk-parity weights: every asset contributes equally to variance.

    Solves ``w_i (H w)_i = c`` by a damped Newton iteration on
    ``w' H w / 2 - c sum(log w)`` from equal weights, then normalizes; the
    normalized output does not depend on ``c``.  If Newton stalls, a cyclic
    per-coordinate exact solve takes over and the result is flagged.
    Returns ``(weights, fallback_used)``.
    """
    h = sym(np.asarray(h_hat, dtype=float))
    p = h.shape[0]
    if np.any(np.diag(h) <= 0.0):
        raise DataError("risk parity needs strictly positive forecast variances")
    scale = float(np.linalg.norm(h, 2))
    w = np.full(p, 1.0 / p)
    fallback = False
    converged = False
    for _ in range(max_iter):
        grad = h @ w - c / w
        if float(np.max(np.abs(_rpp_residual(w, h, c)))) <= tol * max(scale, 1.0):
            converged = True
            break
        hess = h + np.diag(c / (w * w))
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        alpha = 1.0
        neg = step > 0.0
        if np.any(neg):
            alpha = min(1.0, 0.99 * float(np.min(w[neg] / step[neg])))
        w_new = w - alpha * step
        if not np.all(np.isfinite(w_new)) or np.any(w_new <= 0.0):
            break
        w = w_new
    if not converged:
        # Cyclic exact coordinate solve: positive root of the per-coordinate
        # quadratic h_ii w_i^2 + (sum_{j != i} h_ij w_j) w_i - c = 0.
        fallback = True
        w = 1.0 / np.sqrt(np.diag(h))
        for _ in range(10_000):
            for i in range(p):
                rest = float(h[i] @ w) - h[i, i] * w[i]
                w[i] = (-rest + math.sqrt(rest * rest + 4.0 * h[i, i] * c)) / (2.0 * h[i, i])
            if float(np.max(np.abs(_rpp_residual(w, h, c)))) <= tol * max(scale, 1.0):
                converged = True
                break
        if not converged:
            raise NumericsError("risk-parity solve did not converge")
    return w / float(np.sum(w)), fallback


def portfolio_metrics(weights, returns) -> dict:
    """Annualized mean, volatility and their ratio for a weight path.

    ``weights[t]`` must be built from information before ``returns[t]``.
    A zero-volatility path yields ``ir = nan``.
    """
    w = np.asarray(weights, dtype=float)
    y = np.asarray(returns, dtype=float)
    if w.shape != y.shape:
        raise DataError("weights and returns must align one row per date")
    daily = np.sum(w * y, axis=1)
    avg = TRADING_DAYS * float(np.mean(daily))
    sd = math.sqrt(TRADING_DAYS) * float(np.std(daily, ddof=1)) if daily.size > 1 else 0.0
    ir = avg / sd if sd > 0.0 else math.nan
    return {"avg": avg, "sd": sd, "ir": ir, "daily": daily}


@dataclass
class PortfolioResult:
    """A dated weight path with its realized returns and annualized summary.

    Weight rows must each sum to one; risk-parity paths are additionally
    all-positive, which the builder flags but does not enforce here.
    """

    weights: np.ndarray
    returns: np.ndarray
    avg: float
    sd: float
    ir: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != np.asarray(self.returns).shape[0]:
            raise DataError("portfolio weights and returns must align one row per date")
        if np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-10:
            raise DataError("portfolio weight rows must sum to one")


def build_portfolio(weights, returns) -> PortfolioResult:
    """Bundle a weight path and the matching return rows into a result."""
    stats = portfolio_metrics(weights, returns)
    return PortfolioResult(
        weights=np.asarray(weights, dtype=float),
        returns=stats["daily"],
        avg=stats["avg"],
        sd=stats["sd"],
        ir=stats["ir"],
    )


def gmvp_mcs_losses(port_returns) -> np.ndarray:
    """Loss rows for variance-targeting portfolios: squared demeaned returns."""
    r = np.asarray(port_returns, dtype=float)
    return (r - r.mean(axis=0)) ** 2


def rpp_mcs_losses(port_returns) -> np.ndarray:
    """Loss rows for risk-scaled returns: negative return over own volatility."""
    r = np.asarray(port_returns, dtype=float)
    sd = r.std(axis=0, ddof=1)
    if np.any(sd <= 0.0):
        raise DataError("risk-scaled losses need positive return volatility")
    return -r / sd


# ---------------------------------------------------------------------------
# Model confidence set.
# ---------------------------------------------------------------------------


@dataclass
class McsResult:
    """Elimination-order p-values and the surviving set at level alpha."""

    models: list
    p_values: dict
    retained: list
    alpha: float
    statistic: str = "range"
    bootstrap: dict = field(default_factory=dict)


def _block_bootstrap_indices(t_len, block_len, reps, rng):
    n_blocks = int(math.ceil(t_len / block_len))
    starts = rng.integers(0, t_len, size=(reps, n_blocks))
    offsets = np.arange(block_len)
    idx = (starts[:, :, None] + offsets[None, None, :]) % t_len
    return idx.reshape(reps, n_blocks * block_len)[:, :t_len]


def mcs_test(
    losses,
    models=None,
    alpha: float = MCS_ALPHA,
    reps: int = 1000,
    block_len: int | None = None,
    seed: int = 0,
) -> McsResult:
    """Model confidence set with the range statistic.

    Iteratively eliminates the model with the worst standardized mean loss
    while an equal-predictive-ability test rejects at ``alpha``.  The null
    distribution comes from a circular block bootstrap (block length defaults
    to ``ceil(T^(1/3))``); pair variances use the bootstrap dispersion of mean
    loss differentials.  Reported p-values are sequentially maximized along
    the elimination order; exactly tied models stand or fall together.
    """
    l_mat = np.asarray(losses, dtype=float)
    if l_mat.ndim != 2 or l_mat.shape[1] < 2:
        raise DataError("model confidence set needs a (T, K >= 2) loss matrix")
    t_len, k = l_mat.shape
    if not np.all(np.isfinite(l_mat)):
        raise DataError("loss matrix contains non-finite entries")
    names = list(models) if models is not None else [f"m{i}" for i in range(k)]
    if len(names) != k:
        raise DataError("model name list does not match the loss matrix width")
    if block_len is None:
        block_len = int(math.ceil(t_len ** (1.0 / 3.0)))
    rng = np.random.default_rng(seed)
    idx = _block_bootstrap_indices(t_len, block_len, reps, rng)

    col_means = l_mat.mean(axis=0)
    boot_means = l_mat[idx].mean(axis=1)  # (reps, k)
    dbar = col_means[:, None] - col_means[None, :]
    boot_dbar = boot_means[:, :, None] - boot_means[:, None, :]
    var_hat = np.mean((boot_dbar - dbar[None, :, :]) ** 2, axis=0)
    loss_scale = max(float(np.max(np.abs(dbar))), 1.0)
    tiny = 1e-24 * loss_scale**2
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.sqrt(var_hat)
        tstat = np.where(var_hat > tiny, np.abs(dbar) / se, 0.0)
        boot_tstat = np.where(var_hat[None] > tiny, np.abs(boot_dbar - dbar[None]) / se[None], 0.0)

    active = list(range(k))
    p_values = {}
    p_running = 0.0
    while len(active) > 1:
        sub = np.ix_(active, active)
        stat = float(np.max(tstat[sub]))
        null = np.max(boot_tstat[:, active, :][:, :, active], axis=(1, 2))
        p_step = float(np.mean(null >= stat))
        p_running = max(p_running, p_step)
        with np.errstate(divide="ignore", invalid="ignore"):
            signed = np.where(var_hat[sub] > tiny, dbar[sub] / se[sub], 0.0)
        worst = active[int(np.argmax(np.max(signed, axis=1)))]
        p_values[names[worst]] = p_running
        active.remove(worst)
    p_values[names[active[0]]] = 1.0
    retained = [name for name in names if p_values[name] >= alpha]
    return McsResult(
        models=names,
        p_values=p_values,
        retained=retained,
        alpha=alpha,
        bootstrap={"replications": int(reps), "block_length": int(block_len), "seed": int(seed)},
    )
