"""Small shared linear-algebra helpers. Internal module."""

import numpy as np

from .errors import DataError


def sym(a: np.ndarray) -> np.ndarray:
    """Symmetrize, removing floating-point asymmetry."""
    return 0.5 * (a + a.T)


def sym_stack(a: np.ndarray) -> np.ndarray:
    """Symmetrize a stacked (n, p, p) array along the last two axes."""
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def vech(a: np.ndarray) -> np.ndarray:
    """Stack the lower triangle (diagonal included) of a square matrix."""
    i, j = np.tril_indices(a.shape[0])
    return a[i, j]


def vech_labels(names) -> list:
    """Pair labels matching the vech() element order."""
    n = len(names)
    i, j = np.tril_indices(n)
    return [f"{names[r]}|{names[c]}" for r, c in zip(i, j)]


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition.

    Eigenvalues slightly negative from roundoff are clipped at zero; a
    genuinely indefinite input is rejected.
    """
    a = sym(np.asarray(a, dtype=float))
    w, v = np.linalg.eigh(a)
    scale = max(abs(w[-1]), 1.0)
    if w[0] < -1e-10 * scale:
        raise DataError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def psd_inv_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of a positive definite matrix."""
    a = sym(np.asarray(a, dtype=float))
    w, v = np.linalg.eigh(a)
    if w[0] <= 0.0:
        raise DataError(f"matrix is not positive definite (min eigenvalue {w[0]:.3e})")
    return (v / np.sqrt(w)) @ v.T


def spectral_radius(a: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(a)))) if a.size else 0.0


def clip_eigenvalues(a: np.ndarray, floor: float) -> tuple[np.ndarray, bool]:
    """Raise eigenvalues of a symmetric matrix to ``floor``; report activity."""
    w, v = np.linalg.eigh(sym(a))
    clipped = bool(w[0] < floor)
    w = np.maximum(w, floor)
    return (v * w) @ v.T, clipped
