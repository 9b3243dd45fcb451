"""Approximate factor model estimated by EM under exact identification.

The observation model is ``y_t = loadings @ f_t + e_t`` with a diagonal
idiosyncratic covariance.  EM maximizes the Gaussian quasi-likelihood of the
sample covariance; the fitted loadings are then rotated into one of two exact
identification schemes:

* ``ic3``: unit factor second moment, ``loadings' inv(idio) loadings / p``
  diagonal with strictly decreasing entries;
* ``ic2``: ``loadings' inv(idio) loadings / p = I`` with a diagonal factor
  second moment carrying the scale.

Both describe the same implied covariance ``loadings @ M_f @ loadings' + idio``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._linalg import sym
from .data_io import ReturnsPanel, decode_array, encode_array, register_artifact
from .errors import DataError, NumericsError

IDIO_FLOOR_SCALE = 1e-6


@register_artifact("factor_fit", 1)
@dataclass
class FactorFit:
    """Result of an EM factor fit (plus the identification it satisfies)."""

    loadings: np.ndarray
    idio_var: np.ndarray
    factor_moment: np.ndarray
    identification: str
    loglik_trace: list
    col_means: np.ndarray
    converged: bool = True
    floor_active: bool = False

    @property
    def n_assets(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]

    def implied_cov(self) -> np.ndarray:
        """Covariance implied by the static factor structure."""
        lam = self.loadings
        return sym(lam @ self.factor_moment @ lam.T) + np.diag(self.idio_var)

    def to_payload(self) -> dict:
        return {
            "loadings": encode_array(self.loadings),
            "idio_var": encode_array(self.idio_var),
            "factor_moment": encode_array(self.factor_moment),
            "identification": self.identification,
            "loglik_trace": [float(x) for x in self.loglik_trace],
            "col_means": encode_array(self.col_means),
            "converged": bool(self.converged),
            "floor_active": bool(self.floor_active),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "FactorFit":
        return cls(
            loadings=decode_array(payload["loadings"]),
            idio_var=decode_array(payload["idio_var"]),
            factor_moment=decode_array(payload["factor_moment"]),
            identification=payload["identification"],
            loglik_trace=list(payload["loglik_trace"]),
            col_means=decode_array(payload["col_means"]),
            converged=bool(payload["converged"]),
            floor_active=bool(payload["floor_active"]),
        )


@dataclass
class FactorSeries:
    """Cross-sectional factor scores, one row per date."""

    scores: np.ndarray
    dates: list = field(default_factory=list)


def _panel_values(panel) -> np.ndarray:
    if isinstance(panel, ReturnsPanel):
        return panel.values
    return np.asarray(panel, dtype=float)


def factor_log_likelihood(loadings, idio_var, sample_cov) -> float:
    """Per-sample Gaussian log-likelihood of a factor covariance.

    Returns ``-(log det(Sigma) + tr(inv(Sigma) S)) / 2`` for
    ``Sigma = loadings @ loadings' + diag(idio_var)``, dropping the ``2*pi``
    constant.  Uses the matrix-inversion and determinant lemmas so the cost is
    driven by the factor count, not the asset count.
    """
    lam = np.atleast_2d(np.asarray(loadings, dtype=float))
    psi = np.asarray(idio_var, dtype=float)
    s = np.asarray(sample_cov, dtype=float)
    if np.any(psi <= 0.0):
        raise DataError("idiosyncratic variances must be strictly positive")
    m = lam.shape[1]
    lam_w = lam / psi[:, None]
    cap = np.eye(m) + lam.T @ lam_w
    sign, logdet_cap = np.linalg.slogdet(cap)
    if sign <= 0.0:
        raise DataError("implied covariance is not positive definite")
    logdet = logdet_cap + float(np.sum(np.log(psi)))
    inner = lam_w.T @ s @ lam_w
    trace = float(np.sum(np.diag(s) / psi)) - float(np.trace(np.linalg.solve(cap, inner)))
    return -0.5 * (logdet + trace)


def _ic3_rotation(loadings, idio_var):
    """Rotate loadings so scaled cross-products are diagonal, decreasing."""
    p = loadings.shape[0]
    a = sym(loadings.T @ (loadings / idio_var[:, None])) / p
    eigvals, eigvecs = np.linalg.eigh(a)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    rotated = loadings @ eigvecs
    # Sign convention: largest-magnitude entry of each column positive.
    for j in range(rotated.shape[1]):
        k = int(np.argmax(np.abs(rotated[:, j])))
        if rotated[k, j] < 0:
            rotated[:, j] = -rotated[:, j]
    if len(eigvals) > 1 and np.any(np.diff(eigvals) > -1e-12 * max(abs(eigvals[0]), 1.0)):
        warnings.warn("factor identification is weak: scaled cross-product eigenvalues tie")
    return rotated, eigvals


def fit_factor_model_em(panel, n_factors: int, max_iter: int = 2000, tol: float = 1e-8) -> FactorFit:
    """Fit the factor model by EM and return it in the ``ic3`` normalization.

    Initialization takes principal components of the sample correlation matrix
    rescaled to covariance loadings.  Iteration stops when the relative
    log-likelihood improvement drops below ``tol``; hitting ``max_iter`` first
    flags ``converged=False`` but still returns the fit.
    """
    y = _panel_values(panel)
    t, p = y.shape
    m = int(n_factors)
    if not 1 <= m < p:
        raise DataError(f"factor count must satisfy 1 <= m < p, got m={m}, p={p}")
    if t <= m:
        raise DataError(f"need more observations than factors, got T={t}, m={m}")
    means = y.mean(axis=0)
    yc = y - means
    s = sym(yc.T @ yc / t)
    svar = np.diag(s).copy()
    if np.any(svar <= 0.0):
        raise DataError("every asset needs strictly positive sample variance")
    floor = IDIO_FLOOR_SCALE * svar

    sd = np.sqrt(svar)
    corr = s / np.outer(sd, sd)
    w, v = np.linalg.eigh(corr)
    top = np.argsort(w)[::-1][:m]
    lam = sd[:, None] * v[:, top] * np.sqrt(np.clip(w[top], 0.0, None))
    psi = np.maximum(svar - np.einsum("ij,ij->i", lam, lam), floor)

    eye_m = np.eye(m)
    trace = []
    floor_active = False
    converged = False
    for _ in range(max_iter):
        lam_w = lam / psi[:, None]
        cap = eye_m + lam.T @ lam_w
        sign, logdet_cap = np.linalg.slogdet(cap)
        if sign <= 0.0 or not np.isfinite(logdet_cap):
            raise NumericsError("EM produced a non-positive-definite working covariance")
        inner = lam_w.T @ s @ lam_w
        ll = -0.5 * (
            logdet_cap
            + float(np.sum(np.log(psi)))
            + float(np.sum(svar / psi))
            - float(np.trace(np.linalg.solve(cap, inner)))
        )
        if trace and abs(ll - trace[-1]) <= tol * (1.0 + abs(trace[-1])):
            trace.append(ll)
            converged = True
            break
        trace.append(ll)

        beta = np.linalg.solve(cap, lam_w.T)  # m x p
        cross = beta @ s  # m x p, E[f y'] under current params
        second = np.linalg.inv(cap) + cross @ beta.T  # m x m, E[f f']
        lam = np.linalg.solve(sym(second), cross).T
        psi_new = svar - np.einsum("ij,ji->i", lam, cross)
        if np.any(psi_new < floor):
            floor_active = True
        psi = np.maximum(psi_new, floor)

    loadings, _ = _ic3_rotation(lam, psi)
    return FactorFit(
        loadings=loadings,
        idio_var=psi,
        factor_moment=np.eye(m),
        identification="ic3",
        loglik_trace=trace,
        col_means=means,
        converged=converged,
        floor_active=floor_active,
    )


def rotate_ic3_to_ic2(fit: FactorFit) -> FactorFit:
    """Move factor scale from the loadings into the factor second moment.

    The rotated loadings satisfy ``loadings' inv(idio) loadings / p = I``; the
    factor second moment absorbs the former column scales.  The implied
    covariance is unchanged.
    """
    if fit.identification != "ic3":
        raise DataError(f"expected an ic3 fit, got {fit.identification!r}")
    p = fit.n_assets
    a = sym(fit.loadings.T @ (fit.loadings / fit.idio_var[:, None])) / p
    w, v = np.linalg.eigh(a)
    if w[0] <= 0.0:
        raise DataError("scaled loading cross-product is not positive definite")
    inv_sqrt = (v / np.sqrt(w)) @ v.T
    scale = max(abs(w).max(), 1.0)
    if len(w) > 1 and np.min(np.abs(np.subtract.outer(w, w)[~np.eye(len(w), dtype=bool)])) < 1e-10 * scale:
        warnings.warn("factor moment has (near-)tied diagonal entries; ic2 rotation is fragile")
    return FactorFit(
        loadings=fit.loadings @ inv_sqrt,
        idio_var=fit.idio_var.copy(),
        factor_moment=sym(a),
        identification="ic2",
        loglik_trace=list(fit.loglik_trace),
        col_means=fit.col_means.copy(),
        converged=fit.converged,
        floor_active=fit.floor_active,
    )


def gls_factor_scores(fit: FactorFit, panel, means=None) -> FactorSeries:
    """Cross-sectional GLS factor scores.

    Each row solves ``min_f (y_t - loadings f)' inv(idio) (y_t - loadings f)``
    after removing column means.  ``means`` defaults to the means stored with
    the fit; pass explicit values to score a panel disjoint from the fitting
    window without look-ahead.
    """
    y = _panel_values(panel)
    if y.shape[1] != fit.n_assets:
        raise DataError(
            f"panel has {y.shape[1]} assets but the fit expects {fit.n_assets}"
        )
    mu = fit.col_means if means is None else np.asarray(means, dtype=float)
    yc = y - mu
    lam_w = fit.loadings / fit.idio_var[:, None]
    gram = sym(fit.loadings.T @ lam_w)
    try:
        scores = np.linalg.solve(gram, lam_w.T @ yc.T).T
    except np.linalg.LinAlgError:
        raise DataError("GLS normal equations are singular (collinear loadings)") from None
    dates = list(panel.dates) if isinstance(panel, ReturnsPanel) else []
    return FactorSeries(scores=scores, dates=dates)
