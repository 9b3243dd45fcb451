"""Simulation generators with known covariance paths.

Three designs: a diagonal-BEKK recursion, a two-factor GARCH structure and
the factor stochastic-volatility model itself.  All draw innovations from a
variance-standardized Student t(3) through a named, versioned PRNG (numpy's
PCG64) so seeded runs are reproducible bit for bit.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from ._linalg import psd_sqrt, sym, sym_stack
from .data_io import ReturnsPanel
from .errors import ConfigError, DataError, NumericsError

BURN_IN = 200
MAX_RESAMPLE = 1000
INNOV_DF = 3.0


def _rng_metadata() -> dict:
    return {"bit_generator": "PCG64", "package": "numpy", "package_version": np.__version__}


@dataclass
class SimOutput:
    """Simulated returns with the true covariance path and generator metadata."""

    returns: np.ndarray
    true_cov: np.ndarray
    seed: int
    dgp: str
    aux: dict = field(default_factory=dict)
    rng: dict = field(default_factory=_rng_metadata)

    @property
    def n_obs(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    def to_panel(self) -> ReturnsPanel:
        t, p = self.returns.shape
        width = max(6, len(str(t)))
        dates = [f"t{i:0{width}d}" for i in range(1, t + 1)]
        assets = [f"a{j:03d}" for j in range(1, p + 1)]
        return ReturnsPanel(dates=dates, assets=assets, values=self.returns.copy())


def standardized_student_t(df: float, size, rng) -> np.ndarray:
    """Student-t draws scaled to unit variance; requires ``df > 2``."""
    if df <= 2.0:
        raise DataError(f"standardized t requires df > 2, got {df}")
    return rng.standard_t(df, size=size) * math.sqrt((df - 2.0) / df)


def _intercept_matrix(p, rng) -> np.ndarray:
    """Low-signal PSD intercept: outer-product base, uniform diagonal, spectrum repair."""
    k = rng.uniform(-0.2, 0.2, size=(p, p))
    gamma = k @ k.T / p
    gamma[np.diag_indices(p)] = rng.uniform(0.005, 0.025, size=p)
    gamma = sym(gamma)
    lam_min = float(np.linalg.eigvalsh(gamma)[0])
    if lam_min < 0.01:
        zeta = 0.005
        while lam_min + zeta + abs(lam_min) <= 0.01:
            zeta += 0.005
        gamma = gamma + (zeta + abs(lam_min)) * np.eye(p)
    return gamma


def gen_dgp1(p: int, t: int, seed: int) -> SimOutput:
    """Diagonal-BEKK generator: ``H_t = G + A y y' A + B H B`` (diagonal A, B).

    Diagonal coefficients are drawn with ``A_kk^2 + B_kk^2 < 1``; the
    recursion starts at the implied unconditional proxy and discards a 200-step
    burn-in.  Returns are ``H_t^(1/2)`` times standardized t(3) innovations.
    """
    rng = np.random.default_rng(seed)
    gamma = _intercept_matrix(p, rng)
    a = rng.uniform(0.1, 0.4, size=p)
    b = rng.uniform(0.5, 0.8, size=p)
    for _ in range(MAX_RESAMPLE):
        bad = a * a + b * b >= 1.0
        if not bad.any():
            break
        a[bad] = rng.uniform(0.1, 0.4, size=int(bad.sum()))
        b[bad] = rng.uniform(0.5, 0.8, size=int(bad.sum()))
    else:
        raise NumericsError("could not draw stable diagonal-BEKK coefficients")

    total = t + BURN_IN
    h = gamma / (1.0 - float(np.mean(a * a + b * b)))
    aa = np.outer(a, a)
    bb = np.outer(b, b)
    returns = np.empty((total, p))
    covs = np.empty((t, p, p))
    for step in range(total):
        if step >= BURN_IN:
            covs[step - BURN_IN] = h
        y = psd_sqrt(h) @ standardized_student_t(INNOV_DF, p, rng)
        returns[step] = y
        h = sym(gamma + aa * np.outer(y, y) + bb * h)
    return SimOutput(returns=returns[BURN_IN:], true_cov=covs, seed=seed, dgp="dgp1")


def gen_dgp2(p: int, t: int, seed: int, n_vol_factors: int = 2) -> SimOutput:
    """Two-factor GARCH generator: ``H_t = G + sum_j lam_{j,t} beta_j beta_j'``.

    Each factor variance follows a GARCH(1,1) recursion driven by its own
    Gaussian factor return; loading vectors have U(-1, 1) entries.  A 200-step
    burn-in is discarded.
    """
    rng = np.random.default_rng(seed)
    gamma = _intercept_matrix(p, rng)
    m = n_vol_factors
    omega = rng.uniform(0.005, 0.01, size=m)
    kap = rng.uniform(0.05, 0.15, size=m)
    tau = rng.uniform(0.7, 0.9, size=m)
    for _ in range(MAX_RESAMPLE):
        bad = kap + tau >= 1.0
        if not bad.any():
            break
        kap[bad] = rng.uniform(0.05, 0.15, size=int(bad.sum()))
        tau[bad] = rng.uniform(0.7, 0.9, size=int(bad.sum()))
    else:
        raise NumericsError("could not draw stationary factor-GARCH coefficients")
    betas = rng.uniform(-1.0, 1.0, size=(m, p))

    total = t + BURN_IN
    lam = omega / (1.0 - kap - tau)
    outer_b = np.einsum("ji,jk->jik", betas, betas)
    returns = np.empty((total, p))
    covs = np.empty((t, p, p))
    lam_path = np.empty((t, m))
    for step in range(total):
        h = gamma + np.einsum("j,jik->ik", lam, outer_b)
        if step >= BURN_IN:
            covs[step - BURN_IN] = h
            lam_path[step - BURN_IN] = lam
        y = psd_sqrt(h) @ standardized_student_t(INNOV_DF, p, rng)
        returns[step] = y
        r = rng.normal(0.0, np.sqrt(lam))
        lam = omega + kap * r * r + tau * lam
    return SimOutput(
        returns=returns[BURN_IN:],
        true_cov=sym_stack(covs),
        seed=seed,
        dgp="dgp2",
        aux={"factor_variances": lam_path},
    )


def default_fmsv_params(p: int, n_factors: int, seed: int) -> dict:
    """A reasonable stochastic-volatility parameter set keyed off a seed."""
    rng = np.random.default_rng(seed + 10_000_019)
    m = n_factors
    loadings = rng.normal(0.0, 1.0, size=(p, m)) / math.sqrt(m)
    idio_var = rng.uniform(0.3, 0.7, size=p)
    mu = np.linspace(0.0, -0.5 * (m - 1), m)
    phi = np.diag(np.linspace(0.95, 0.75, m))
    sigma_eta = np.diag(np.linspace(0.05, 0.1, m))
    return {"loadings": loadings, "idio_var": idio_var, "mu": mu, "phi": phi,
            "sigma_eta": sigma_eta}


def gen_fmsv(p: int, t: int, seed: int, params: dict) -> SimOutput:
    """Factor stochastic-volatility generator.

    Log-variances follow a stationary VAR(1) started from its unconditional
    law; factors are Gaussian with variances ``exp(h)``; returns add diagonal
    Gaussian idiosyncratic noise.  True covariances are
    ``loadings diag(exp(h_t)) loadings' + diag(idio_var)``.
    """
    rng = np.random.default_rng(seed)
    loadings = np.asarray(params["loadings"], dtype=float)
    idio_var = np.asarray(params["idio_var"], dtype=float)
    mu = np.asarray(params["mu"], dtype=float)
    phi = np.asarray(params["phi"], dtype=float)
    sigma_eta = sym(np.asarray(params["sigma_eta"], dtype=float))
    m = loadings.shape[1]
    if loadings.shape[0] != p:
        raise DataError("loading matrix does not match the requested dimension")
    if np.max(np.abs(np.linalg.eigvals(phi))) >= 1.0:
        raise DataError("log-variance transition must be strictly stable")
    h_cov = sym(solve_discrete_lyapunov(phi, sigma_eta))
    eta_sqrt = psd_sqrt(sigma_eta)
    h = mu + psd_sqrt(h_cov) @ rng.standard_normal(m)
    idio_sd = np.sqrt(idio_var)

    returns = np.empty((t, p))
    covs = np.empty((t, p, p))
    factors = np.empty((t, m))
    log_vols = np.empty((t, m))
    idio_diag = np.diag(idio_var)
    for step in range(t):
        log_vols[step] = h
        d = np.exp(h)
        covs[step] = sym((loadings * d) @ loadings.T) + idio_diag
        f = np.sqrt(d) * rng.standard_normal(m)
        factors[step] = f
        returns[step] = loadings @ f + idio_sd * rng.standard_normal(p)
        h = mu + phi @ (h - mu) + eta_sqrt @ rng.standard_normal(m)
    return SimOutput(
        returns=returns,
        true_cov=covs,
        seed=seed,
        dgp="fmsv",
        aux={"factors": factors, "log_vols": log_vols},
    )


def generate(dgp: str, p: int, t: int, seed: int, fmsv_factors: int = 2) -> SimOutput:
    """Dispatch on generator name; unknown names are a config-level error."""
    if dgp == "dgp1":
        return gen_dgp1(p, t, seed)
    if dgp == "dgp2":
        return gen_dgp2(p, t, seed)
    if dgp == "fmsv":
        return gen_fmsv(p, t, seed, default_fmsv_params(p, fmsv_factors, seed))
    raise ConfigError(f"unknown simulation design {dgp!r}")
