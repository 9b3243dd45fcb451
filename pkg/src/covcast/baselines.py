"""Static covariance baselines: the sample estimator and one-parameter
shrinkage toward a scaled identity."""

from dataclasses import dataclass

import numpy as np

from ._linalg import sym
from .data_io import ReturnsPanel, decode_array, encode_array, register_artifact
from .errors import DataError


def _values(panel):
    return panel.values if isinstance(panel, ReturnsPanel) else np.asarray(panel, dtype=float)


def sample_covariance(panel) -> np.ndarray:
    """Maximum-likelihood sample covariance ``(1/T) sum (y_t - mean)(y_t - mean)'``."""
    y = _values(panel)
    if y.ndim != 2 or y.shape[0] < 2:
        raise DataError("sample covariance needs a (T, p) panel with T >= 2")
    yc = y - y.mean(axis=0)
    return sym(yc.T @ yc / y.shape[0])


def cov1para_shrinkage(panel) -> np.ndarray:
    """Shrink the sample covariance toward ``mean-variance * I``.

    The intensity estimates the ratio of sampling noise in the covariance
    entries to the distance between sample and target, clamped to [0, 1]; a
    sample covariance already proportional to the identity maps to the target
    itself.
    """
    y = _values(panel)
    if y.ndim != 2 or y.shape[0] < 2:
        raise DataError("shrinkage estimator needs a (T, p) panel with T >= 2")
    t, p = y.shape
    yc = y - y.mean(axis=0)
    s = sym(yc.T @ yc / t)
    mu = float(np.trace(s)) / p
    target = mu * np.eye(p)

    y2 = yc * yc
    phi_mat = y2.T @ y2 / t - s * s
    phi = float(np.sum(phi_mat))
    gamma = float(np.linalg.norm(s - target, "fro") ** 2)
    if gamma <= 1e-30:
        shrink = 1.0
    else:
        shrink = max(0.0, min(1.0, phi / gamma / t))
    return sym(shrink * target + (1.0 - shrink) * s)


@register_artifact("static_cov", 1)
@dataclass
class StaticCov:
    """A constant covariance estimate persisted as a fit artifact.

    ``method`` records which estimator produced the matrix so forecasts and
    reports can label it.
    """

    method: str
    matrix: np.ndarray
    assets: list

    def __post_init__(self):
        self.matrix = sym(np.asarray(self.matrix, dtype=float))
        if self.matrix.shape[0] != len(self.assets):
            raise DataError("static covariance shape must match the asset list")

    def to_payload(self) -> dict:
        return {
            "method": self.method,
            "matrix": encode_array(self.matrix),
            "assets": list(self.assets),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "StaticCov":
        return cls(method=payload["method"], matrix=decode_array(payload["matrix"]),
                   assets=list(payload["assets"]))
