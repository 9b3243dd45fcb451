"""Sparse VAR estimation: OLS pilot, adaptive-lasso shrinkage, out-of-sample CV.

Coefficients for a VAR(q) are fit equation by equation.  The lasso stage
minimizes ``0.5 * sum_t ||x_t - coef @ z_{t-1}||^2 + T * lam * sum_k w_k |theta_k|``
by cyclic coordinate descent on the Gram form; weights come from an OLS pilot
raised to ``-gamma`` (pilot zeros pin coefficients at zero).  Lambda selection
follows a two-phase out-of-sample protocol: a plain-lasso sweep locates the
scale, then 50 adaptive candidates around it are scored on the test window.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import DataError

RIDGE_SCALE = 1e-8
COND_LIMIT = 1e12
KKT_TOL = 1e-7
MAX_SWEEPS = 10_000


@dataclass
class LaggedDesign:
    """Zero-initialized lag design: row t holds ``(1, x_{t-1}, ..., x_{t-q})``."""

    responses: np.ndarray
    regressors: np.ndarray
    order: int

    @property
    def n_obs(self) -> int:
        return self.responses.shape[0]

    @property
    def n_series(self) -> int:
        return self.responses.shape[1]

    @property
    def n_regressors(self) -> int:
        return self.regressors.shape[1]


@dataclass
class VarCoeffs:
    """Intercept and lag matrices of a fitted VAR(q).

    ``lag_mats[k][i, j]`` multiplies series ``j`` lagged ``k + 1`` steps in the
    equation for series ``i``.  ``support`` lists row-major indices of nonzero
    entries of the stacked ``(m, 1 + q*m)`` coefficient matrix.
    """

    intercept: np.ndarray
    lag_mats: np.ndarray
    penalized: bool
    lam: float
    support: list
    converged: bool = True
    ridge_used: bool = False

    @property
    def order(self) -> int:
        return self.lag_mats.shape[0]

    @property
    def n_series(self) -> int:
        return self.lag_mats.shape[1] if self.lag_mats.ndim == 3 else self.intercept.shape[0]

    def coef_matrix(self) -> np.ndarray:
        """Stack intercept and lag matrices into shape ``(m, 1 + q*m)``."""
        m = self.intercept.shape[0]
        q = self.order
        out = np.empty((m, 1 + q * m))
        out[:, 0] = self.intercept
        for k in range(q):
            out[:, 1 + k * m : 1 + (k + 1) * m] = self.lag_mats[k]
        return out


def _coeffs_from_matrix(mat, q, penalized, lam, converged=True, ridge_used=False) -> VarCoeffs:
    m = mat.shape[0]
    lag_mats = np.stack([mat[:, 1 + k * m : 1 + (k + 1) * m] for k in range(q)]) if q else np.zeros((0, m, m))
    support = [int(i) for i in np.flatnonzero(mat)]
    return VarCoeffs(
        intercept=mat[:, 0].copy(),
        lag_mats=lag_mats,
        penalized=penalized,
        lam=float(lam),
        support=support,
        converged=converged,
        ridge_used=ridge_used,
    )


def build_lagged_design(x, q: int) -> LaggedDesign:
    """Assemble the VAR(q) design with zeros standing in for pre-sample lags."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DataError("series must be a (T, m) array")
    t, m = x.shape
    if q < 1:
        raise DataError(f"lag order must be >= 1, got {q}")
    if t < 2:
        raise DataError("need at least two observations to build a lag design")
    z = np.zeros((t, 1 + q * m))
    z[:, 0] = 1.0
    for k in range(1, q + 1):
        z[k:, 1 + (k - 1) * m : 1 + k * m] = x[:-k]
    return LaggedDesign(responses=x.copy(), regressors=z, order=q)


def ols_var(design: LaggedDesign) -> VarCoeffs:
    """Least-squares VAR fit, one equation at a time on the shared Gram matrix.

    Ill-conditioned normal equations (condition number above 1e12) fall back
    to a small ridge proportional to the Gram trace; the fit is flagged.
    """
    z = design.regressors
    x = design.responses
    gram = z.T @ z
    d = gram.shape[0]
    ridge_used = False
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        gram = gram + (RIDGE_SCALE * np.trace(gram) / d) * np.eye(d)
        ridge_used = True
    try:
        lu, piv = lu_factor(gram)
    except ValueError:
        raise DataError("VAR normal equations could not be factorized") from None
    coef = np.empty((x.shape[1], d))
    for j in range(x.shape[1]):
        coef[j] = lu_solve((lu, piv), z.T @ x[:, j])
    if not np.all(np.isfinite(coef)):
        raise DataError("VAR normal equations are rank deficient beyond the ridge fallback")
    return VarCoeffs(
        intercept=coef[:, 0].copy(),
        lag_mats=np.stack([coef[:, 1 + k * x.shape[1] : 1 + (k + 1) * x.shape[1]] for k in range(design.order)]),
        penalized=False,
        lam=0.0,
        support=[int(i) for i in np.flatnonzero(coef)],
        ridge_used=ridge_used,
    )


def var_residuals(x, coeffs: VarCoeffs) -> np.ndarray:
    """Full-sample residuals under zero-initialized pre-sample lags (T, m)."""
    design = build_lagged_design(x, coeffs.order)
    return design.responses - design.regressors @ coeffs.coef_matrix().T


def _soft(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


def _cd_equation(gram, xty, theta0, penalty, kkt_tol, max_sweeps, objective_trace=None):
    """Cyclic coordinate descent for one penalized least-squares equation.

    ``penalty`` holds per-coordinate absolute-penalty levels; ``inf`` entries
    pin coefficients at zero.  Returns (theta, converged).
    """
    d = gram.shape[0]
    diag = np.diag(gram).copy()
    pinned = ~np.isfinite(penalty) | (diag <= 0.0)
    theta = np.where(pinned, 0.0, theta0)
    g_theta = gram @ theta
    free = np.flatnonzero(~pinned)
    pen = np.where(pinned, 0.0, penalty)

    def kkt_violation():
        grad = g_theta - xty
        active = (theta != 0.0) & ~pinned
        zero = (theta == 0.0) & ~pinned
        v = 0.0
        if np.any(active):
            v = float(np.max(np.abs(grad[active] + pen[active] * np.sign(theta[active]))))
        if np.any(zero):
            v = max(v, float(np.max(np.abs(grad[zero]) - pen[zero])))
        return v

    converged = False
    for _ in range(max_sweeps):
        max_delta = 0.0
        for k in free:
            rho = xty[k] - g_theta[k] + diag[k] * theta[k]
            new = _soft(rho, pen[k]) / diag[k] if pen[k] > 0.0 else rho / diag[k]
            delta = new - theta[k]
            if delta != 0.0:
                g_theta += gram[:, k] * delta
                theta[k] = new
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        if objective_trace is not None:
            objective_trace.append(
                0.5 * float(theta @ g_theta) - float(xty @ theta) + float(np.sum(pen * np.abs(theta)))
            )
        if kkt_violation() <= kkt_tol:
            converged = True
            break
        if max_delta == 0.0:
            # Fixed point reached but KKT tolerance unmet: no further progress possible.
            break
    return theta, converged


def _weights_from_pilot(pilot_mat, gamma):
    with np.errstate(divide="ignore"):
        return np.abs(pilot_mat) ** (-float(gamma))


def adaptive_lasso_var(
    design: LaggedDesign,
    pilot: VarCoeffs,
    lam: float,
    gamma: float = 1.0,
    penalize_intercept: bool = True,
    kkt_tol: float = KKT_TOL,
    max_sweeps: int = MAX_SWEEPS,
    objective_trace=None,
) -> VarCoeffs:
    """Adaptive-lasso VAR at a single penalty level.

    ``lam = 0`` bypasses shrinkage entirely and returns the OLS solution (the
    penalty vanishes, so pilot-based pinning does not apply).
    """
    if lam < 0.0:
        raise DataError(f"penalty level must be non-negative, got {lam}")
    if lam == 0.0:
        out = ols_var(design)
        out.penalized = True
        return out
    z = design.regressors
    x = design.responses
    t, m = x.shape
    gram = z.T @ z
    pilot_mat = pilot.coef_matrix()
    if pilot_mat.shape != (m, gram.shape[0]):
        raise DataError("pilot coefficient shape does not match the design")
    weights = _weights_from_pilot(pilot_mat, gamma)
    if not penalize_intercept:
        weights[:, 0] = 0.0
    coef = np.empty_like(pilot_mat)
    converged = True
    for j in range(m):
        trace_j = objective_trace if (objective_trace is not None and j == 0) else None
        theta, ok = _cd_equation(
            gram, z.T @ x[:, j], pilot_mat[j].copy(), t * lam * weights[j], kkt_tol, max_sweeps, trace_j
        )
        coef[j] = theta
        converged = converged and ok
    return _coeffs_from_matrix(coef, design.order, penalized=True, lam=lam, converged=converged)


def _lambda_max(xty_mat, t, weights):
    """Smallest penalty at which every penalized coefficient is zero."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(xty_mat) / (t * weights)
    ratio = ratio[np.isfinite(ratio) & (weights > 0.0)]
    if ratio.size == 0:
        raise DataError("no penalized coordinates: cannot place a penalty grid")
    return float(ratio.max())


def _path_scores(gram_tr, xty_tr, t_tr, weights, lams, z_te, x_te, kkt_tol, max_sweeps):
    """Fit a descending lambda path on the training Gram, score on the test rows."""
    m = x_te.shape[1]
    d = gram_tr.shape[0]
    order = np.argsort(lams)[::-1]
    theta = np.zeros((m, d))
    scores = np.full(len(lams), np.nan)
    for idx in order:
        lam = lams[idx]
        if lam == 0.0:
            coef = np.empty((m, d))
            lu, piv = lu_factor(gram_tr + 1e-12 * np.trace(gram_tr) / d * np.eye(d))
            for j in range(m):
                coef[j] = lu_solve((lu, piv), xty_tr[:, j])
            theta = coef
        else:
            for j in range(m):
                theta[j], _ = _cd_equation(
                    gram_tr, xty_tr[:, j], theta[j].copy(), t_tr * lam * weights[j], kkt_tol, max_sweeps
                )
        resid = x_te - z_te @ theta.T
        scores[idx] = 0.5 * float(np.mean(np.sum(resid * resid, axis=1)))
    return scores


@dataclass
class CvResult:
    """Outcome of the two-phase penalty search."""

    lambda_star: float
    lambda_lasso: float
    cv_curve: list
    lasso_curve: list
    final: VarCoeffs


def cross_validate_lambda(
    x,
    q: int,
    gamma: float = 1.0,
    ratio: float = 0.75,
    penalize_intercept: bool = True,
    n_lasso_grid: int = 40,
    grid_floor: float = 1e-4,
) -> CvResult:
    """Select the adaptive-lasso penalty on a chronological train/test split.

    Phase one sweeps a plain lasso (unit weights) over ``n_lasso_grid``
    log-spaced candidates below the zeroing level plus an unpenalized point,
    scoring one-step predictions on the held-out tail.  Phase two rescans
    ``{0.1, 0.2, ..., 5.0}`` times the phase-one winner with adaptive weights
    from a training OLS pilot.  The returned fit re-estimates on the full
    sample at the selected penalty.
    """
    x = np.asarray(x, dtype=float)
    t = x.shape[0]
    t_star = int(math.floor(ratio * t))
    if t_star < q + 2:
        raise DataError(f"training window too short: floor({ratio} * {t}) = {t_star} < q + 2")
    if t - t_star < 1:
        raise DataError("cross-validation test window is empty")
    design = build_lagged_design(x, q)
    z_tr, x_tr = design.regressors[:t_star], design.responses[:t_star]
    z_te, x_te = design.regressors[t_star:], design.responses[t_star:]
    gram_tr = z_tr.T @ z_tr
    xty_tr = z_tr.T @ x_tr
    m = x.shape[1]

    unit_w = np.ones((m, gram_tr.shape[0]))
    if not penalize_intercept:
        unit_w[:, 0] = 0.0
    lam_max = _lambda_max(xty_tr.T, t_star, unit_w)
    lasso_lams = np.concatenate(
        [[0.0], np.geomspace(grid_floor * lam_max, lam_max, n_lasso_grid)]
    )
    lasso_scores = _path_scores(
        gram_tr, xty_tr, t_star, unit_w, lasso_lams, z_te, x_te, KKT_TOL, MAX_SWEEPS
    )
    lam_lasso = float(lasso_lams[int(np.argmin(lasso_scores))])

    train_design = LaggedDesign(responses=x_tr, regressors=z_tr, order=q)
    pilot_tr = ols_var(train_design)
    weights = _weights_from_pilot(pilot_tr.coef_matrix(), gamma)
    if not penalize_intercept:
        weights[:, 0] = 0.0
    adapt_lams = lam_lasso * np.arange(1, 51) / 10.0
    if lam_lasso == 0.0:
        adapt_lams = np.array([0.0])
    adapt_scores = _path_scores(
        gram_tr, xty_tr, t_star, weights, adapt_lams, z_te, x_te, KKT_TOL, MAX_SWEEPS
    )
    lam_star = float(adapt_lams[int(np.argmin(adapt_scores))])

    pilot_full = ols_var(design)
    final = adaptive_lasso_var(
        design, pilot_full, lam_star, gamma=gamma, penalize_intercept=penalize_intercept
    )
    return CvResult(
        lambda_star=lam_star,
        lambda_lasso=lam_lasso,
        cv_curve=[(float(l), float(s)) for l, s in zip(adapt_lams, adapt_scores)],
        lasso_curve=[(float(l), float(s)) for l, s in zip(lasso_lams, lasso_scores)],
        final=final,
    )
