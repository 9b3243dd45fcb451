"""GARCH-family competitor models: univariate GARCH(1,1) marginals, dynamic
conditional correlations, a variance-targeted scalar BEKK and a principal
component factor GARCH.

All fits are Gaussian quasi-maximum-likelihood with derivative-free simplex
searches over transformed (unconstrained) parameters.  High-dimensional DCC
and BEKK likelihoods switch to a composite likelihood over contiguous asset
pairs; at the default threshold (100 assets) the full likelihood is used.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter
from scipy.special import expit, logit

from ._linalg import sym, sym_stack
from .data_io import CovPath, ReturnsPanel, decode_array, encode_array, register_artifact
from .errors import DataError

PERSISTENCE_CAP = 1.0 - 1e-4
MULTISTARTS = ((0.05, 0.90), (0.02, 0.95), (0.10, 0.85))
COMPOSITE_THRESHOLD = 100


def _values(panel):
    return panel.values if isinstance(panel, ReturnsPanel) else np.asarray(panel, dtype=float)


def _assets(panel, p):
    return list(panel.assets) if isinstance(panel, ReturnsPanel) else [f"a{i}" for i in range(p)]


def _dates(panel, n):
    return list(panel.dates) if isinstance(panel, ReturnsPanel) else list(range(n))


# ---------------------------------------------------------------------------
# Univariate GARCH(1,1).
# ---------------------------------------------------------------------------


@dataclass
class Garch11Params:
    """GARCH(1,1) parameters with the variance used to seed the recursion."""

    omega: float
    alpha: float
    beta: float
    h1: float
    loglik: float
    fallback: bool = False

    @property
    def uncond_var(self) -> float:
        return self.omega / (1.0 - self.alpha - self.beta)

    def to_payload(self) -> dict:
        return {
            "omega": float(self.omega),
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "h1": float(self.h1),
            "loglik": float(self.loglik),
            "fallback": bool(self.fallback),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Garch11Params":
        return cls(**payload)


def garch11_variance_path(params: Garch11Params, series) -> np.ndarray:
    """Conditional variance recursion seeded at the stored ``h1``."""
    y = np.asarray(series, dtype=float)
    return _garch_path(y, params.omega, params.alpha, params.beta, params.h1)


def _garch_path(y, omega, alpha, beta, h1):
    t = y.shape[0]
    h = np.empty(t)
    h[0] = h1
    if t > 1:
        driver = omega + alpha * y[:-1] ** 2
        h[1:] = lfilter([1.0], [1.0, -beta], driver, zi=np.array([beta * h1]))[0]
    return h

def _garch_loglik(y, omega, alpha, beta, h1):
    h = _garch_path(y, omega, alpha, beta, h1)
    if np.any(h <= 0.0) or not np.all(np.isfinite(h)):
        return -np.inf
    return -0.5 * float(np.sum(np.log(h) + y * y / h))


def _unpack_garch(u):
    omega = float(np.exp(u[0]))
    s = PERSISTENCE_CAP * expit(u[1])
    frac = expit(u[2])
    return omega, s * frac, s * (1.0 - frac)


def fit_garch11(series) -> Garch11Params:
    """Gaussian QML fit of GARCH(1,1), recursion seeded at the sample variance.

    The search runs Nelder-Mead from several persistence starts on transformed
    parameters (log variance scale, logistic persistence split) under
    ``alpha + beta <= 1 - 1e-4``.  If every start fails, a variance-targeted
    grid search supplies the answer and the fit is flagged.
    """
    y = np.asarray(series, dtype=float).ravel()
    t = y.shape[0]
    if t < 50:
        raise DataError(f"GARCH(1,1) needs at least 50 observations, got {t}")
    var = float(np.var(y))
    if var <= 0.0:
        raise DataError("GARCH(1,1) needs a series with positive variance")
    h1 = var

    def neg(u):
        omega, alpha, beta = _unpack_garch(u)
        return -_garch_loglik(y, omega, alpha, beta, h1)

    best = None
    for a0, b0 in MULTISTARTS:
        s = a0 + b0
        u0 = np.array([
            np.log(var * (1.0 - s)),
            logit(min(s / PERSISTENCE_CAP, 1.0 - 1e-10)),
            logit(a0 / s),
        ])
        res = minimize(neg, u0, method="Nelder-Mead",
                       options={"maxiter": 2000, "xatol": 1e-8, "fatol": 1e-10})
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    baseline = -_garch_loglik(y, var, 0.0, 0.0, h1)
    if best is not None and best.fun <= baseline + 1e-8:
        omega, alpha, beta = _unpack_garch(best.x)
        return Garch11Params(omega=omega, alpha=alpha, beta=beta, h1=h1, loglik=-float(best.fun))

    # Fallback: variance-targeted grid, omega pinned so the long-run variance
    # matches the sample variance.
    grid_best = (var, 0.0, 0.0, baseline)
    for alpha in np.linspace(0.0, 0.3, 16):
        for beta in np.linspace(0.0, 0.98, 50):
            if alpha + beta >= PERSISTENCE_CAP:
                continue
            omega = var * (1.0 - alpha - beta)
            nll = -_garch_loglik(y, omega, alpha, beta, h1)
            if nll < grid_best[3]:
                grid_best = (omega, alpha, beta, nll)
    omega, alpha, beta, nll = grid_best
    return Garch11Params(omega=omega, alpha=alpha, beta=beta, h1=h1, loglik=-float(nll),
                         fallback=True)


# ---------------------------------------------------------------------------
# Dynamic conditional correlations.
# ---------------------------------------------------------------------------


@register_artifact("dcc", 1)
@dataclass
class DccFit:
    """Two-step DCC fit: per-asset marginals plus correlation dynamics."""

    marginals: list
    a: float
    b: float
    q_bar: np.ndarray
    means: np.ndarray
    mode: str
    loglik: float
    q_bar_shrunk: bool = False

    def to_payload(self) -> dict:
        return {
            "marginals": [g.to_payload() for g in self.marginals],
            "a": float(self.a),
            "b": float(self.b),
            "q_bar": encode_array(self.q_bar),
            "means": encode_array(self.means),
            "mode": self.mode,
            "loglik": float(self.loglik),
            "q_bar_shrunk": bool(self.q_bar_shrunk),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "DccFit":
        return cls(
            marginals=[Garch11Params.from_payload(g) for g in payload["marginals"]],
            a=float(payload["a"]),
            b=float(payload["b"]),
            q_bar=decode_array(payload["q_bar"]),
            means=decode_array(payload["means"]),
            mode=payload["mode"],
            loglik=float(payload["loglik"]),
            q_bar_shrunk=bool(payload["q_bar_shrunk"]),
        )


def _marginal_paths(marginals, yc):
    h = np.empty_like(yc)
    for j, g in enumerate(marginals):
        h[:, j] = garch11_variance_path(g, yc[:, j])
    return h


def _q_path(u, q_bar, a, b):
    """Correlation-driver recursion Q_t, flattened and run as a linear filter."""
    t, p = u.shape
    base = (1.0 - a - b) * q_bar
    q = np.empty((t, p, p))
    q[0] = q_bar
    if t > 1:
        outer = u[:-1, :, None] * u[:-1, None, :]
        driver = (base[None, :, :] + a * outer).reshape(t - 1, p * p)
        zi = (b * q_bar).reshape(1, p * p)
        q[1:] = lfilter([1.0], [1.0, -b], driver, axis=0, zi=zi)[0].reshape(t - 1, p, p)
    return q

def _normalize_corr(q):
    d = np.sqrt(np.einsum("tii->ti", q))
    return q / (d[:, :, None] * d[:, None, :])


def _pairs(p):
    return np.arange(p - 1), np.arange(1, p)


def _dcc_correlation_nll(u, q_bar, a, b, mode):
    q = _q_path(u, q_bar, a, b)
    if mode == "full":
        r = _normalize_corr(q)
        sign, logdet = np.linalg.slogdet(r)
        if np.any(sign <= 0.0):
            return np.inf
        quad = np.einsum("ti,ti->t", u, np.linalg.solve(r, u[:, :, None])[:, :, 0])
        return 0.5 * float(np.sum(logdet + quad))
    i, j = _pairs(u.shape[1])
    rho = q[:, i, j] / np.sqrt(q[:, i, i] * q[:, j, j])
    one_m = 1.0 - rho * rho
    if np.any(one_m <= 0.0):
        return np.inf
    ui, uj = u[:, i], u[:, j]
    terms = np.log(one_m) + (ui * ui + uj * uj - 2.0 * rho * ui * uj) / one_m
    return 0.5 * float(np.sum(terms)) / (u.shape[1] - 1)


def fit_dcc(panel, mode: str = "auto", threshold: int = COMPOSITE_THRESHOLD) -> DccFit:
    """Two-step Gaussian QML: GARCH(1,1) marginals, then correlation dynamics.

    The correlation target is the sample correlation of standardized returns,
    shrunk toward the identity (and flagged) if it fails to be positive
    definite.  ``mode`` picks the correlation likelihood: ``full`` (dense,
    only up to ``threshold`` assets), ``composite`` (contiguous overlapping
    pairs) or ``auto``.
    """
    y = _values(panel)
    t, p = y.shape
    if p < 2:
        raise DataError("DCC needs at least two assets")
    if mode not in ("auto", "full", "composite"):
        raise DataError(f"unknown DCC mode {mode!r}")
    if mode == "full" and p > threshold:
        raise DataError(f"full DCC likelihood limited to {threshold} assets, got {p}")
    if mode == "auto":
        mode = "full" if p <= threshold else "composite"
    means = y.mean(axis=0)
    yc = y - means
    marginals = [fit_garch11(yc[:, j]) for j in range(p)]
    u = yc / np.sqrt(_marginal_paths(marginals, yc))

    q_bar = sym(u.T @ u / t)
    d = np.sqrt(np.diag(q_bar))
    q_bar = q_bar / np.outer(d, d)
    shrunk = False
    blend = 1e-6
    while np.linalg.eigvalsh(q_bar)[0] <= 0.0:
        q_bar = sym((1.0 - blend) * q_bar + blend * np.eye(p))
        shrunk = True
        blend *= 10.0
        if blend > 1.0:
            raise DataError("correlation target could not be made positive definite")

    def neg(v):
        s = PERSISTENCE_CAP * expit(v[0])
        frac = expit(v[1])
        return _dcc_correlation_nll(u, q_bar, s * frac, s * (1.0 - frac), mode)

    best = None
    for a0, b0 in MULTISTARTS:
        s = a0 + b0
        v0 = np.array([logit(min(s / PERSISTENCE_CAP, 1.0 - 1e-10)), logit(a0 / s)])
        res = minimize(neg, v0, method="Nelder-Mead",
                       options={"maxiter": 1000, "xatol": 1e-7, "fatol": 1e-9})
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise DataError("DCC correlation likelihood failed at every start")
    s = PERSISTENCE_CAP * expit(best.x[0])
    frac = expit(best.x[1])
    return DccFit(
        marginals=marginals,
        a=float(s * frac),
        b=float(s * (1.0 - frac)),
        q_bar=q_bar,
        means=means,
        mode=mode,
        loglik=-float(best.fun),
        q_bar_shrunk=shrunk,
    )


def dcc_cov_path(fit: DccFit, panel) -> CovPath:
    """Conditional covariances over a panel with frozen DCC parameters.

    Recursions start from the fitted initial conditions (in-sample variance
    seeds and the correlation target), so the matrix at row ``t`` only uses
    observations before ``t``.
    """
    y = _values(panel)
    yc = y - fit.means
    h = _marginal_paths(fit.marginals, yc)
    u = yc / np.sqrt(h)
    r = _normalize_corr(_q_path(u, fit.q_bar, fit.a, fit.b))
    d = np.sqrt(h)
    mats = r * (d[:, :, None] * d[:, None, :])
    return CovPath(dates=_dates(panel, y.shape[0]), assets=_assets(panel, y.shape[1]),
                   matrices=sym_stack(mats))


# ---------------------------------------------------------------------------
# Scalar BEKK with variance targeting.
# ---------------------------------------------------------------------------


@register_artifact("sbekk", 1)
@dataclass
class SbekkFit:
    """Scalar-BEKK parameters with the covariance target."""

    a: float
    b: float
    s_hat: np.ndarray
    means: np.ndarray
    mode: str
    loglik: float

    def to_payload(self) -> dict:
        return {
            "a": float(self.a),
            "b": float(self.b),
            "s_hat": encode_array(self.s_hat),
            "means": encode_array(self.means),
            "mode": self.mode,
            "loglik": float(self.loglik),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "SbekkFit":
        return cls(
            a=float(payload["a"]),
            b=float(payload["b"]),
            s_hat=decode_array(payload["s_hat"]),
            means=decode_array(payload["means"]),
            mode=payload["mode"],
            loglik=float(payload["loglik"]),
        )


def _bekk_path(yc, s_hat, a2, b2):
    t, p = yc.shape
    base = (1.0 - a2 - b2) * s_hat
    h = np.empty((t, p, p))
    h[0] = s_hat
    if t > 1:
        outer = yc[:-1, :, None] * yc[:-1, None, :]
        driver = (base[None, :, :] + a2 * outer).reshape(t - 1, p * p)
        zi = (b2 * s_hat).reshape(1, p * p)
        h[1:] = lfilter([1.0], [1.0, -b2], driver, axis=0, zi=zi)[0].reshape(t - 1, p, p)
    return h

def _bekk_nll(yc, s_hat, a2, b2, mode):
    h = _bekk_path(yc, s_hat, a2, b2)
    if mode == "full":
        sign, logdet = np.linalg.slogdet(h)
        if np.any(sign <= 0.0):
            return np.inf
        quad = np.einsum("ti,ti->t", yc, np.linalg.solve(h, yc[:, :, None])[:, :, 0])
        return 0.5 * float(np.sum(logdet + quad))
    i, j = _pairs(yc.shape[1])
    hii, hjj, hij = h[:, i, i], h[:, j, j], h[:, i, j]
    det = hii * hjj - hij * hij
    if np.any(det <= 0.0):
        return np.inf
    yi, yj = yc[:, i], yc[:, j]
    quad = (hjj * yi * yi - 2.0 * hij * yi * yj + hii * yj * yj) / det
    return 0.5 * float(np.sum(np.log(det) + quad)) / (yc.shape[1] - 1)


def fit_sbekk(panel, mode: str = "auto", threshold: int = COMPOSITE_THRESHOLD) -> SbekkFit:
    """Variance-targeted scalar BEKK by Gaussian QML.

    The recursion is ``H_t = (1 - a^2 - b^2) S + a^2 y_{t-1} y_{t-1}' +
    b^2 H_{t-1}`` started at the sample covariance ``S``; the persistence
    constraint is ``a^2 + b^2 <= 1 - 1e-4``.
    """
    y = _values(panel)
    t, p = y.shape
    if mode not in ("auto", "full", "composite"):
        raise DataError(f"unknown BEKK mode {mode!r}")
    if mode == "full" and p > threshold:
        raise DataError(f"full BEKK likelihood limited to {threshold} assets, got {p}")
    if mode == "auto":
        mode = "full" if p <= threshold else "composite"
    if mode == "composite" and p < 2:
        raise DataError("composite likelihood needs at least two assets")
    means = y.mean(axis=0)
    yc = y - means
    s_hat = sym(yc.T @ yc / t)
    if np.linalg.eigvalsh(s_hat)[0] <= 0.0:
        raise DataError("sample covariance target must be positive definite")

    def neg(v):
        rho = PERSISTENCE_CAP * expit(v[0])
        frac = expit(v[1])
        return _bekk_nll(yc, s_hat, rho * frac, rho * (1.0 - frac), mode)

    best = None
    for a0, b0 in MULTISTARTS:
        rho = a0 * a0 + b0 * b0
        v0 = np.array([logit(min(rho / PERSISTENCE_CAP, 1.0 - 1e-10)),
                       logit(a0 * a0 / rho)])
        res = minimize(neg, v0, method="Nelder-Mead",
                       options={"maxiter": 1000, "xatol": 1e-7, "fatol": 1e-9})
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise DataError("BEKK likelihood failed at every start")
    rho = PERSISTENCE_CAP * expit(best.x[0])
    frac = expit(best.x[1])
    return SbekkFit(
        a=float(np.sqrt(rho * frac)),
        b=float(np.sqrt(rho * (1.0 - frac))),
        s_hat=s_hat,
        means=means,
        mode=mode,
        loglik=-float(best.fun),
    )


def sbekk_cov_path(fit: SbekkFit, panel) -> CovPath:
    """BEKK recursion over a panel with frozen parameters (no look-ahead)."""
    y = _values(panel)
    yc = y - fit.means
    mats = _bekk_path(yc, fit.s_hat, fit.a**2, fit.b**2)
    return CovPath(dates=_dates(panel, y.shape[0]), assets=_assets(panel, y.shape[1]),
                   matrices=sym_stack(mats))


# ---------------------------------------------------------------------------
# Principal-component factor GARCH.
# ---------------------------------------------------------------------------


@register_artifact("fgarch", 1)
@dataclass
class FgarchFit:
    """Orthonormal principal-component loadings with per-factor GARCH(1,1)."""

    loadings: np.ndarray
    factor_garch: list
    idio_var: np.ndarray
    means: np.ndarray

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]

    def to_payload(self) -> dict:
        return {
            "loadings": encode_array(self.loadings),
            "factor_garch": [g.to_payload() for g in self.factor_garch],
            "idio_var": encode_array(self.idio_var),
            "means": encode_array(self.means),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "FgarchFit":
        return cls(
            loadings=decode_array(payload["loadings"]),
            factor_garch=[Garch11Params.from_payload(g) for g in payload["factor_garch"]],
            idio_var=decode_array(payload["idio_var"]),
            means=decode_array(payload["means"]),
        )


def fit_fgarch(panel, n_factors: int) -> FgarchFit:
    """Eigenvector factors of the sample second moment plus GARCH(1,1) volatilities.

    Loadings are the top eigenvectors of ``Y'Y / T`` (orthonormal columns,
    largest-magnitude entry positive); factor series are ``Y @ loadings``;
    idiosyncratic variances are the diagonal of the residual second moment.
    """
    y = _values(panel)
    t, p = y.shape
    m = int(n_factors)
    if not 1 <= m <= p:
        raise DataError(f"factor count must satisfy 1 <= m <= p, got m={m}, p={p}")
    means = y.mean(axis=0)
    yc = y - means
    w, v = np.linalg.eigh(sym(yc.T @ yc / t))
    order = np.argsort(w)[::-1][:m]
    loadings = v[:, order]
    for j in range(m):
        k = int(np.argmax(np.abs(loadings[:, j])))
        if loadings[k, j] < 0:
            loadings[:, j] = -loadings[:, j]
    factors = yc @ loadings
    garches = [fit_garch11(factors[:, j]) for j in range(m)]
    resid = yc - factors @ loadings.T
    idio = np.mean(resid * resid, axis=0)
    return FgarchFit(loadings=loadings, factor_garch=garches, idio_var=idio, means=means)


def fgarch_cov_path(fit: FgarchFit, panel) -> CovPath:
    """Factor-GARCH covariances over a panel with frozen parameters."""
    y = _values(panel)
    yc = y - fit.means
    factors = yc @ fit.loadings
    h = np.empty_like(factors)
    for j, g in enumerate(fit.factor_garch):
        h[:, j] = garch11_variance_path(g, factors[:, j])
    lam = fit.loadings
    mats = np.einsum("ij,tj,kj->tik", lam, h, lam)
    mats += np.diag(fit.idio_var)
    return CovPath(dates=_dates(panel, y.shape[0]), assets=_assets(panel, y.shape[1]),
                   matrices=mats)


# ---------------------------------------------------------------------------
# Multi-step forecasts beyond the end of a panel.
# ---------------------------------------------------------------------------


def _forecast_dates(panel, horizon):
    y = _values(panel)
    last = panel.dates[-1] if isinstance(panel, ReturnsPanel) else y.shape[0] - 1
    return [f"{last}+{l}" for l in range(1, horizon + 1)]


def _garch_forecast(params: Garch11Params, series, horizon):
    """One exact step from the last observation, then mean-reverting steps."""
    y = np.asarray(series, dtype=float)
    h = garch11_variance_path(params, y)
    out = np.empty(horizon)
    out[0] = params.omega + params.alpha * y[-1] ** 2 + params.beta * h[-1]
    for l in range(1, horizon):
        out[l] = params.omega + (params.alpha + params.beta) * out[l - 1]
    return out


def dcc_forecast(fit: DccFit, panel, horizon: int) -> CovPath:
    """DCC covariance forecasts for steps beyond the panel.

    Marginal variances follow the exact GARCH(1,1) forecast recursion; the
    correlation driver takes one exact step and then reverts toward its
    target at rate ``a + b``, the usual approximation that treats the
    standardized outer product as its conditional expectation.
    """
    if horizon < 1:
        raise DataError("forecast horizon must be at least 1")
    y = _values(panel)
    yc = y - fit.means
    h = _marginal_paths(fit.marginals, yc)
    u = yc / np.sqrt(h)
    q = _q_path(u, fit.q_bar, fit.a, fit.b)

    h_fore = np.column_stack([
        _garch_forecast(g, yc[:, j], horizon) for j, g in enumerate(fit.marginals)
    ])
    base = (1.0 - fit.a - fit.b) * fit.q_bar
    q_next = base + fit.a * np.outer(u[-1], u[-1]) + fit.b * q[-1]
    mats = np.empty((horizon, y.shape[1], y.shape[1]))
    for l in range(horizon):
        if l > 0:
            q_next = base + (fit.a + fit.b) * q_next
        r = _normalize_corr(q_next[None])[0]
        d = np.sqrt(h_fore[l])
        mats[l] = r * np.outer(d, d)
    return CovPath(dates=_forecast_dates(panel, horizon),
                   assets=_assets(panel, y.shape[1]), matrices=sym_stack(mats))


def sbekk_forecast(fit: SbekkFit, panel, horizon: int) -> CovPath:
    """Scalar-BEKK forecasts: one exact step, then geometric target reversion."""
    if horizon < 1:
        raise DataError("forecast horizon must be at least 1")
    y = _values(panel)
    yc = y - fit.means
    a2, b2 = fit.a**2, fit.b**2
    h = _bekk_path(yc, fit.s_hat, a2, b2)
    base = (1.0 - a2 - b2) * fit.s_hat
    mats = np.empty((horizon, y.shape[1], y.shape[1]))
    mats[0] = base + a2 * np.outer(yc[-1], yc[-1]) + b2 * h[-1]
    for l in range(1, horizon):
        mats[l] = base + (a2 + b2) * mats[l - 1]
    return CovPath(dates=_forecast_dates(panel, horizon),
                   assets=_assets(panel, y.shape[1]), matrices=sym_stack(mats))


def fgarch_forecast(fit: FgarchFit, panel, horizon: int) -> CovPath:
    """Factor-GARCH forecasts: per-factor variance forecasts, static residual."""
    if horizon < 1:
        raise DataError("forecast horizon must be at least 1")
    y = _values(panel)
    yc = y - fit.means
    factors = yc @ fit.loadings
    h_fore = np.column_stack([
        _garch_forecast(g, factors[:, j], horizon) for j, g in enumerate(fit.factor_garch)
    ])
    lam = fit.loadings
    mats = np.einsum("ij,lj,kj->lik", lam, h_fore, lam)
    mats += np.diag(fit.idio_var)
    return CovPath(dates=_forecast_dates(panel, horizon),
                   assets=_assets(panel, y.shape[1]), matrices=sym_stack(mats))
