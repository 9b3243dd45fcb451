"""Stochastic-volatility stage of the factor pipeline.

Squared factor scores are mapped to a stationary log scale, fit with a
three-step procedure (sparse VAR prewhitening, a VAR(1)-plus-innovation
regression, a variance split between log-volatility states and observation
noise), and forecast through a linear-Gaussian state space

    x_t = nu + alpha_t + obs_noise,   alpha_{t+1} = transition @ alpha_t + state_noise.

Covariance forecasts recombine the predicted per-factor variances with the
static factor structure: ``H = loadings @ diag(exp(h)) @ loadings' + idio``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import schur, solve_discrete_lyapunov
from scipy.special import digamma

from ._linalg import clip_eigenvalues, spectral_radius, sym
from .data_io import CovPath, ReturnsPanel, decode_array, encode_array, register_artifact
from .errors import DataError, NumericsError
from .factor_model import FactorFit, fit_factor_model_em, gls_factor_scores, rotate_ic3_to_ic2
from .sparse_var import CvResult, VarCoeffs, cross_validate_lambda, var_residuals

# Mean of log(z^2) for standard normal z; re-centers log-squared factor scores.
KAPPA_GAUSSIAN = float(digamma(0.5) + math.log(2.0))

TRANSFORM_C_SCALE = 1e-4
SPLIT_CLAMP = 1e-3
ETA_FLOOR_SCALE = 1e-8
UNIT_ROOT_TOL = 1e-9
DIFFUSE_SCALE = 1e7


@dataclass
class LogSqSeries:
    """Log-squared factor scores with the offsets used in the transform."""

    x: np.ndarray
    c: np.ndarray
    s_sq: np.ndarray


def apply_log_square(scores, c) -> np.ndarray:
    """Apply ``log(f^2 + c) - c / (f^2 + c)`` with fixed offsets ``c``."""
    f = np.asarray(scores, dtype=float)
    c = np.asarray(c, dtype=float)
    fsq = f * f
    return np.log(fsq + c) - c / (fsq + c)


def log_square_transform(scores) -> LogSqSeries:
    """Map factor scores to a log-variance scale, bounded near zero.

    The per-series offset is ``1e-4`` times the mean squared score, so the
    transform tracks ``log(f^2)`` away from zero but stays finite at it.
    """
    f = scores.scores if hasattr(scores, "scores") else np.asarray(scores, dtype=float)
    f = np.atleast_2d(f)
    s_sq = np.mean(f * f, axis=0)
    if np.any(s_sq <= 0.0):
        raise DataError("a factor series is identically zero; log-square transform undefined")
    c = TRANSFORM_C_SCALE * s_sq
    return LogSqSeries(x=apply_log_square(f, c), c=c, s_sq=s_sq)


# ---------------------------------------------------------------------------
# Three estimation steps.
# ---------------------------------------------------------------------------


@dataclass
class Step1Result:
    coeffs: VarCoeffs
    residuals: np.ndarray
    cv: CvResult


def msv_step1(series: LogSqSeries, q: int = 10, gamma: float = 1.0, cv_ratio: float = 0.75,
              penalize_intercept: bool = True) -> Step1Result:
    """Prewhiten the log-squared series with a CV-tuned sparse VAR(q)."""
    cv = cross_validate_lambda(series.x, q, gamma=gamma, ratio=cv_ratio,
                               penalize_intercept=penalize_intercept)
    residuals = var_residuals(series.x, cv.final)
    return Step1Result(coeffs=cv.final, residuals=residuals, cv=cv)


@dataclass
class Step2Result:
    c_star: np.ndarray
    phi: np.ndarray
    xi: np.ndarray
    ridge_used: bool = False


def msv_step2(series: LogSqSeries, residuals, start: int = 1) -> Step2Result:
    """Regress ``x_t`` on ``(1, x_{t-1}, u_{t-1})`` by least squares.

    The first ``start`` rows are dropped (at least one: there is no usable
    innovation before the sample).  Near-singular normal equations (for
    example when the step-1 residuals are numerically zero) fall back to a
    trace-scaled ridge and are flagged.
    """
    x = series.x
    u = np.asarray(residuals, dtype=float)
    t, m = x.shape
    if u.shape != x.shape:
        raise DataError("residual matrix must match the series shape")
    if not 1 <= start <= t - 2:
        raise DataError(f"step-2 start offset {start} leaves too few observations")
    resp = x[start:]
    k = np.concatenate([np.ones((t - start, 1)), x[start - 1 : t - 1], u[start - 1 : t - 1]], axis=1)
    gram = k.T @ k
    d = gram.shape[0]
    ridge_used = False
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        gram = gram + (1e-8 * np.trace(gram) / d) * np.eye(d)
        ridge_used = True
    coef = np.linalg.solve(gram, k.T @ resp).T
    return Step2Result(
        c_star=coef[:, 0].copy(),
        phi=coef[:, 1 : 1 + m].copy(),
        xi=coef[:, 1 + m :].copy(),
        ridge_used=ridge_used,
    )


@dataclass
class Step3Result:
    sigma_xi: np.ndarray
    sigma_alpha: np.ndarray
    split_r: float
    clamped: bool


def msv_step3(series: LogSqSeries) -> Step3Result:
    """Split the sample variance of x between observation noise and states.

    The observation-noise share is pinned by the log-chi-squared variance
    ``pi^2 / 2`` per coordinate: ``r = (pi^2 / 2) / (tr(S_x) / m)``, clamped
    away from 0 and 1.
    """
    x = series.x
    t, m = x.shape
    xc = x - x.mean(axis=0)
    s_x = sym(xc.T @ xc / t)
    trace = float(np.trace(s_x))
    if trace <= 0.0:
        raise DataError("log-squared series has zero variance")
    r_raw = (math.pi**2 / 2.0) / (trace / m)
    r = min(max(r_raw, SPLIT_CLAMP), 1.0 - SPLIT_CLAMP)
    return Step3Result(
        sigma_xi=r * s_x,
        sigma_alpha=(1.0 - r) * s_x,
        split_r=float(r),
        clamped=bool(r != r_raw),
    )


def derive_state_noise(sigma_alpha, phi) -> tuple:
    """State-noise covariance ``sigma_alpha - phi sigma_alpha phi'``, made PSD.

    Eigenvalues below ``1e-8 * tr(sigma_alpha) / m`` are raised to that floor;
    returns ``(sigma_eta, clipped)``.
    """
    sigma_alpha = sym(np.asarray(sigma_alpha, dtype=float))
    phi = np.asarray(phi, dtype=float)
    m = sigma_alpha.shape[0]
    raw = sym(sigma_alpha - phi @ sigma_alpha @ phi.T)
    floor = ETA_FLOOR_SCALE * float(np.trace(sigma_alpha)) / m
    w = np.linalg.eigvalsh(raw)
    if w[0] >= floor:
        return raw, False
    clipped, _ = clip_eigenvalues(raw, floor)
    return clipped, True


# ---------------------------------------------------------------------------
# Transition stabilization and the moving-average companion solver.
# ---------------------------------------------------------------------------


@dataclass
class StabilizationRecord:
    """What the unit-circle projection did to the fitted transition."""

    phi_used: np.ndarray
    c_used: np.ndarray
    replaced_eigs: list
    fallback: bool = False

    @property
    def n_replaced(self) -> int:
        return len(self.replaced_eigs)

    def to_payload(self) -> dict:
        return {
            "phi_used": encode_array(self.phi_used),
            "c_used": encode_array(self.c_used),
            "replaced_eigs": [[float(np.real(e)), float(np.imag(e))] for e in self.replaced_eigs],
            "fallback": bool(self.fallback),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "StabilizationRecord":
        return cls(
            phi_used=decode_array(payload["phi_used"]),
            c_used=decode_array(payload["c_used"]),
            replaced_eigs=[complex(re, im) for re, im in payload["replaced_eigs"]],
            fallback=bool(payload["fallback"]),
        )


def stabilize_transition(phi, intercept) -> StabilizationRecord:
    """Project explosive transition eigenvalues onto the unit circle.

    Works on the real Schur form: real eigenvalues with modulus above one
    become exactly one, complex-pair blocks are scaled to unit spectral
    radius, and the intercept loses its components along the replaced Schur
    directions.  A transition already inside the (slightly padded) unit disc
    passes through unchanged, which makes the map idempotent.
    """
    phi = np.asarray(phi, dtype=float)
    c = np.asarray(intercept, dtype=float)
    eigs = np.linalg.eigvals(phi)
    threshold = 1.0 + UNIT_ROOT_TOL
    mask = np.abs(eigs) > threshold
    if not np.any(mask):
        return StabilizationRecord(phi_used=phi.copy(), c_used=c.copy(), replaced_eigs=[])
    try:
        t_s, z, sdim = schur(
            phi, output="real", sort=lambda re, im: re * re + im * im > threshold**2
        )
    except np.linalg.LinAlgError:
        rho = float(np.max(np.abs(eigs)))
        return StabilizationRecord(
            phi_used=phi * (0.999 / rho), c_used=c.copy(), replaced_eigs=list(eigs[mask]),
            fallback=True,
        )
    t_s = t_s.copy()
    i = 0
    while i < sdim:
        if i + 1 < t_s.shape[0] and t_s[i + 1, i] != 0.0:
            block = t_s[i : i + 2, i : i + 2]
            modulus = math.sqrt(abs(float(np.linalg.det(block))))
            t_s[i : i + 2, i : i + 2] = block / modulus
            i += 2
        else:
            t_s[i, i] = 1.0
            i += 1
    phi_used = z @ t_s @ z.T
    q_r = z[:, :sdim]
    c_used = c - q_r @ (q_r.T @ c)
    return StabilizationRecord(phi_used=phi_used, c_used=c_used, replaced_eigs=list(eigs[mask]))


def solve_vma_upsilon(phi, sigma_xi, sigma_eta, tol: float = 1e-10, max_iter: int = 200_000):
    """Invertible moving-average factor of the prewhitened innovation process.

    Solves ``U C U' - U W0 + C = 0`` for the root with spectral radius below
    one, where ``C = phi @ sigma_xi`` and ``W0 = sigma_xi + phi sigma_xi phi'
    + sigma_eta`` are the lag-one and lag-zero autocovariances of the
    composite innovation.  Returns ``(upsilon, sigma_u)`` with
    ``sigma_u = W0 - C @ upsilon'`` satisfying both moment equations.
    """
    phi = np.asarray(phi, dtype=float)
    sigma_xi = sym(np.asarray(sigma_xi, dtype=float))
    sigma_eta = sym(np.asarray(sigma_eta, dtype=float))
    if spectral_radius(phi) >= 1.0:
        raise DataError("moving-average solver requires a strictly stable transition")
    c = phi @ sigma_xi
    w0 = sym(sigma_xi + phi @ sigma_xi @ phi.T + sigma_eta)
    m = phi.shape[0]
    if not np.any(c):
        return np.zeros((m, m)), w0
    sign, _ = np.linalg.slogdet(w0)
    if sign <= 0.0:
        raise DataError("composite innovation variance is singular")
    u = np.zeros((m, m))
    for _ in range(max_iter):
        u_new = np.linalg.solve(w0, (u @ c @ u.T + c).T).T
        if float(np.linalg.norm(u_new - u)) < tol:
            u = u_new
            break
        u = u_new
    else:
        raise NumericsError("moving-average fixed point did not converge")
    sigma_u = sym(w0 - c @ u.T)
    scale = max(1.0, float(np.linalg.norm(w0)))
    res1 = float(np.linalg.norm(sigma_u + u @ sigma_u @ u.T - w0))
    res2 = float(np.linalg.norm(u @ sigma_u - c))
    if max(res1, res2) > 1e-8 * scale:
        raise NumericsError(
            f"moving-average moment residuals too large ({res1:.2e}, {res2:.2e})"
        )
    if spectral_radius(u) >= 1.0:
        raise NumericsError("moving-average root is not invertible")
    return u, sigma_u


# ---------------------------------------------------------------------------
# Linear-Gaussian filtering.
# ---------------------------------------------------------------------------


@dataclass
class StateSpace:
    """Identity-observation state space with additive intercepts."""

    transition: np.ndarray
    state_noise: np.ndarray
    obs_noise: np.ndarray
    obs_intercept: np.ndarray
    state_intercept: np.ndarray


@dataclass
class KalmanOutput:
    filtered_mean: np.ndarray
    filtered_cov: np.ndarray
    predicted_mean: np.ndarray
    predicted_cov: np.ndarray
    smoothed_mean: np.ndarray
    smoothed_cov: np.ndarray
    forecast_mean: np.ndarray
    forecast_cov: np.ndarray


def _solve_psd(a, b):
    """Solve ``a x = b`` for symmetric ``a``; pseudo-inverse on singularity."""
    try:
        x = np.linalg.solve(a, b)
        if np.all(np.isfinite(x)):
            return x
    except np.linalg.LinAlgError:
        pass
    return np.linalg.pinv(a, hermitian=True) @ b


def kalman_filter_smoother(ss: StateSpace, x, a0=None, p0=None, horizon: int = 0) -> KalmanOutput:
    """Standard filter, fixed-interval smoother and h-step state predictions.

    ``predicted_*[t]`` condition on observations strictly before ``t``;
    ``forecast_*[l]`` extend ``l + 1`` steps past the sample.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t_len, m = x.shape
    phi = ss.transition
    q = sym(ss.state_noise)
    r = sym(ss.obs_noise)
    nu = ss.obs_intercept
    ci = ss.state_intercept
    a = np.zeros(m) if a0 is None else np.asarray(a0, dtype=float).copy()
    p = sym(np.asarray(p0, dtype=float)) if p0 is not None else _stationary_cov(phi, q)

    filtered_mean = np.empty((t_len, m))
    filtered_cov = np.empty((t_len, m, m))
    predicted_mean = np.empty((t_len, m))
    predicted_cov = np.empty((t_len, m, m))
    eye = np.eye(m)
    for t in range(t_len):
        predicted_mean[t] = a
        predicted_cov[t] = p
        f = p + r
        if not np.all(np.isfinite(f)):
            raise NumericsError(f"non-finite innovation covariance at step {t}")
        gain = _solve_psd(f, p).T
        v = x[t] - nu - a
        a_f = a + gain @ v
        p_f = sym((eye - gain) @ p)
        filtered_mean[t] = a_f
        filtered_cov[t] = p_f
        a = phi @ a_f + ci
        p = sym(phi @ p_f @ phi.T + q)

    smoothed_mean = np.empty_like(filtered_mean)
    smoothed_cov = np.empty_like(filtered_cov)
    smoothed_mean[-1] = filtered_mean[-1]
    smoothed_cov[-1] = filtered_cov[-1]
    for t in range(t_len - 2, -1, -1):
        j = _solve_psd(predicted_cov[t + 1], phi @ filtered_cov[t]).T
        smoothed_mean[t] = filtered_mean[t] + j @ (smoothed_mean[t + 1] - predicted_mean[t + 1])
        smoothed_cov[t] = sym(
            filtered_cov[t] + j @ (smoothed_cov[t + 1] - predicted_cov[t + 1]) @ j.T
        )

    forecast_mean = np.empty((horizon, m))
    forecast_cov = np.empty((horizon, m, m))
    a_h = filtered_mean[-1]
    p_h = filtered_cov[-1]
    for l in range(horizon):
        a_h = phi @ a_h + ci
        p_h = sym(phi @ p_h @ phi.T + q)
        forecast_mean[l] = a_h
        forecast_cov[l] = p_h

    return KalmanOutput(
        filtered_mean=filtered_mean,
        filtered_cov=filtered_cov,
        predicted_mean=predicted_mean,
        predicted_cov=predicted_cov,
        smoothed_mean=smoothed_mean,
        smoothed_cov=smoothed_cov,
        forecast_mean=forecast_mean,
        forecast_cov=forecast_cov,
    )


def _stationary_cov(phi, q):
    if spectral_radius(phi) >= 1.0 - UNIT_ROOT_TOL:
        raise DataError("stationary initialization requires a strictly stable transition")
    return sym(solve_discrete_lyapunov(phi, sym(q)))


def initial_state(transition, state_noise, diffuse_scale: float = DIFFUSE_SCALE):
    """Unconditional filter initialization, diffuse on (near-)unit-root parts.

    Stationary directions receive the discrete-Lyapunov covariance; directions
    whose Schur eigenvalues sit on or outside the unit circle get a large
    diagonal proxy instead.
    """
    phi = np.asarray(transition, dtype=float)
    q = sym(np.asarray(state_noise, dtype=float))
    m = phi.shape[0]
    if spectral_radius(phi) < 1.0 - UNIT_ROOT_TOL:
        return np.zeros(m), _stationary_cov(phi, q)
    cut = (1.0 - UNIT_ROOT_TOL) ** 2
    t_s, z, sdim = schur(phi, output="real", sort=lambda re, im: re * re + im * im >= cut)
    b = z.T @ q @ z
    p_b = np.zeros((m, m))
    p_b[:sdim, :sdim] = diffuse_scale * np.eye(sdim)
    if sdim < m:
        p_b[sdim:, sdim:] = solve_discrete_lyapunov(t_s[sdim:, sdim:], sym(b[sdim:, sdim:]))
    return np.zeros(m), sym(z @ p_b @ z.T)


# ---------------------------------------------------------------------------
# Assembled model: factor structure + volatility state space.
# ---------------------------------------------------------------------------


@dataclass
class MsvFit:
    """Fitted volatility stage: transform constants, VAR stages, state space."""

    transform_c: np.ndarray
    transform_s_sq: np.ndarray
    var_coeffs: VarCoeffs
    lambda_star: float
    cv_curve: list
    c_star: np.ndarray
    phi: np.ndarray
    xi: np.ndarray
    sigma_xi: np.ndarray
    sigma_alpha: np.ndarray
    split_r: float
    split_clamped: bool
    sigma_eta: np.ndarray
    eta_clipped: bool
    stabilization: StabilizationRecord
    nu_star: np.ndarray

    def to_payload(self) -> dict:
        vc = self.var_coeffs
        return {
            "transform_c": encode_array(self.transform_c),
            "transform_s_sq": encode_array(self.transform_s_sq),
            "var_intercept": encode_array(vc.intercept),
            "var_lag_mats": encode_array(vc.lag_mats),
            "var_lambda": float(vc.lam),
            "lambda_star": float(self.lambda_star),
            "cv_curve": [[float(a), float(b)] for a, b in self.cv_curve],
            "c_star": encode_array(self.c_star),
            "phi": encode_array(self.phi),
            "xi": encode_array(self.xi),
            "sigma_xi": encode_array(self.sigma_xi),
            "sigma_alpha": encode_array(self.sigma_alpha),
            "split_r": float(self.split_r),
            "split_clamped": bool(self.split_clamped),
            "sigma_eta": encode_array(self.sigma_eta),
            "eta_clipped": bool(self.eta_clipped),
            "stabilization": self.stabilization.to_payload(),
            "nu_star": encode_array(self.nu_star),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "MsvFit":
        lag_mats = decode_array(payload["var_lag_mats"])
        intercept = decode_array(payload["var_intercept"])
        mat = np.concatenate([intercept[:, None]] + [lag_mats[k] for k in range(lag_mats.shape[0])], axis=1)
        vc = VarCoeffs(
            intercept=intercept,
            lag_mats=lag_mats,
            penalized=True,
            lam=float(payload["var_lambda"]),
            support=[int(i) for i in np.flatnonzero(mat)],
        )
        return cls(
            transform_c=decode_array(payload["transform_c"]),
            transform_s_sq=decode_array(payload["transform_s_sq"]),
            var_coeffs=vc,
            lambda_star=float(payload["lambda_star"]),
            cv_curve=[(float(a), float(b)) for a, b in payload["cv_curve"]],
            c_star=decode_array(payload["c_star"]),
            phi=decode_array(payload["phi"]),
            xi=decode_array(payload["xi"]),
            sigma_xi=decode_array(payload["sigma_xi"]),
            sigma_alpha=decode_array(payload["sigma_alpha"]),
            split_r=float(payload["split_r"]),
            split_clamped=bool(payload["split_clamped"]),
            sigma_eta=decode_array(payload["sigma_eta"]),
            eta_clipped=bool(payload["eta_clipped"]),
            stabilization=StabilizationRecord.from_payload(payload["stabilization"]),
            nu_star=decode_array(payload["nu_star"]),
        )


@register_artifact("fmsv", 1)
@dataclass
class FmsvModel:
    """Factor structure plus fitted volatility dynamics, ready to forecast."""

    factor: FactorFit
    msv: MsvFit
    offsets: np.ndarray
    means: np.ndarray

    @property
    def n_factors(self) -> int:
        return self.factor.n_factors

    def to_payload(self) -> dict:
        return {
            "factor": self.factor.to_payload(),
            "msv": self.msv.to_payload(),
            "offsets": encode_array(self.offsets),
            "means": encode_array(self.means),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "FmsvModel":
        return cls(
            factor=FactorFit.from_payload(payload["factor"]),
            msv=MsvFit.from_payload(payload["msv"]),
            offsets=decode_array(payload["offsets"]),
            means=decode_array(payload["means"]),
        )


def fit_fmsv(
    panel,
    n_factors: int,
    q: int = 10,
    gamma: float = 1.0,
    cv_ratio: float = 0.75,
    em_max_iter: int = 2000,
    em_tol: float = 1e-8,
    penalize_intercept: bool = True,
    trim_presample: bool = False,
) -> FmsvModel:
    """Run the full estimation pipeline on a returns panel.

    Factor stage (EM + exact identification + GLS scores), log-square
    transform, the three volatility steps, state-noise derivation and
    transition stabilization.  ``trim_presample`` starts the second-step
    regression after the lag window instead of at the second observation.
    """
    fit_ic3 = fit_factor_model_em(panel, n_factors, max_iter=em_max_iter, tol=em_tol)
    fit_ic2 = rotate_ic3_to_ic2(fit_ic3)
    scores = gls_factor_scores(fit_ic2, panel)
    series = log_square_transform(scores.scores)
    step1 = msv_step1(series, q=q, gamma=gamma, cv_ratio=cv_ratio,
                      penalize_intercept=penalize_intercept)
    start = q if trim_presample else 1
    step2 = msv_step2(series, step1.residuals, start=start)
    step3 = msv_step3(series)
    sigma_eta, eta_clipped = derive_state_noise(step3.sigma_alpha, step2.phi)
    stab = stabilize_transition(step2.phi, step2.c_star)
    msv = MsvFit(
        transform_c=series.c,
        transform_s_sq=series.s_sq,
        var_coeffs=step1.coeffs,
        lambda_star=step1.cv.lambda_star,
        cv_curve=list(step1.cv.cv_curve),
        c_star=step2.c_star,
        phi=step2.phi,
        xi=step2.xi,
        sigma_xi=step3.sigma_xi,
        sigma_alpha=step3.sigma_alpha,
        split_r=step3.split_r,
        split_clamped=step3.clamped,
        sigma_eta=sigma_eta,
        eta_clipped=eta_clipped,
        stabilization=stab,
        nu_star=series.x.mean(axis=0),
    )
    m = fit_ic2.n_factors
    return FmsvModel(
        factor=fit_ic2,
        msv=msv,
        offsets=np.full(m, KAPPA_GAUSSIAN),
        means=fit_ic2.col_means.copy(),
    )


def _model_state_space(model: FmsvModel) -> StateSpace:
    msv = model.msv
    m = msv.phi.shape[0]
    return StateSpace(
        transition=msv.stabilization.phi_used,
        state_noise=msv.sigma_eta,
        obs_noise=msv.sigma_xi,
        obs_intercept=msv.nu_star,
        state_intercept=np.zeros(m),
    )


def _model_logsq_series(model: FmsvModel, panel) -> np.ndarray:
    scores = gls_factor_scores(model.factor, panel, means=model.means)
    return apply_log_square(scores.scores, model.msv.transform_c)


def _cov_from_log_vols(model: FmsvModel, x_hat, correction) -> np.ndarray:
    """Map predicted log-variance rows to covariance matrices (n, p, p)."""
    d = np.exp(x_hat - model.offsets + 0.5 * correction)
    lam = model.factor.loadings
    paths = np.einsum("ij,tj,kj->tik", lam, d, lam)
    paths += np.diag(model.factor.idio_var)
    return paths


def _run_model_filter(model: FmsvModel, panel, horizon: int = 0) -> tuple:
    ss = _model_state_space(model)
    a0, p0 = initial_state(ss.transition, ss.state_noise)
    x = _model_logsq_series(model, panel)
    return x, kalman_filter_smoother(ss, x, a0=a0, p0=p0, horizon=horizon)


def forecast_covariance(model: FmsvModel, panel, horizon: int,
                        lognormal_correction: bool = False) -> CovPath:
    """Out-of-sample covariance forecasts 1..horizon steps past the panel.

    Volatility states are filtered over the panel and propagated forward; by
    default the half-variance lognormal term is omitted (forecasts target the
    median volatility level).
    """
    if horizon < 1:
        raise DataError(f"forecast horizon must be >= 1, got {horizon}")
    _, out = _run_model_filter(model, panel, horizon=horizon)
    nu = model.msv.nu_star
    x_hat = nu + out.forecast_mean
    corr = np.array([np.diag(c) for c in out.forecast_cov]) if lognormal_correction else np.zeros_like(x_hat)
    mats = _cov_from_log_vols(model, x_hat, corr)
    last = panel.dates[-1] if isinstance(panel, ReturnsPanel) and panel.dates else "T"
    dates = [f"{last}+{l}" for l in range(1, horizon + 1)]
    assets = panel.assets if isinstance(panel, ReturnsPanel) else [f"a{i}" for i in range(mats.shape[1])]
    return CovPath(dates=dates, assets=list(assets), matrices=mats)


def insample_covariance_path(model: FmsvModel, panel,
                             lognormal_correction: bool = False) -> CovPath:
    """Smoothed (full-information) fitted covariances, one per panel date."""
    _, out = _run_model_filter(model, panel)
    nu = model.msv.nu_star
    x_hat = nu + out.smoothed_mean
    corr = (
        np.array([np.diag(c) for c in out.smoothed_cov])
        if lognormal_correction
        else np.zeros_like(x_hat)
    )
    mats = _cov_from_log_vols(model, x_hat, corr)
    dates = list(panel.dates) if isinstance(panel, ReturnsPanel) else list(range(mats.shape[0]))
    assets = panel.assets if isinstance(panel, ReturnsPanel) else [f"a{i}" for i in range(mats.shape[1])]
    return CovPath(dates=dates, assets=list(assets), matrices=mats)


def onestep_covariance_path(model: FmsvModel, panel, start: int) -> CovPath:
    """One-step-ahead covariance forecasts for rows ``start..T-1``.

    The filter runs over the whole panel with parameters (loadings, means,
    transform offsets, state space) frozen at their fitted values; the
    prediction for row ``t`` only conditions on rows before ``t``.
    """
    x, out = _run_model_filter(model, panel)
    if not 0 <= start < x.shape[0]:
        raise DataError(f"one-step path start {start} outside the panel")
    nu = model.msv.nu_star
    x_hat = nu + out.predicted_mean[start:]
    mats = _cov_from_log_vols(model, x_hat, np.zeros_like(x_hat))
    dates = list(panel.dates[start:]) if isinstance(panel, ReturnsPanel) else list(range(start, x.shape[0]))
    assets = panel.assets if isinstance(panel, ReturnsPanel) else [f"a{i}" for i in range(mats.shape[1])]
    return CovPath(dates=dates, assets=list(assets), matrices=mats)
