"""Symmetric PSD square roots and the pseudo-inverse used by the Bismut weight."""

import numpy as np

from .errors import LinAlgError

SYM_TOL = 1e-10
NEG_TOL = 1e-10


def _check_symmetric(m, tol):
    asym = np.max(np.abs(m - np.swapaxes(m, -1, -2)), axis=(-2, -1))
    scale = 1.0 + np.max(np.abs(m), axis=(-2, -1))
    if np.any(asym > tol * scale):
        raise LinAlgError(f"matrix not symmetric (max asymmetry {float(np.max(asym)):.3e})")


def sqrt_psd(m, neg_tol=NEG_TOL):
    """Principal square root of a symmetric PSD matrix (or a stack of them).

    Eigenvalues in ``[-neg_tol, 0)`` are clipped to zero; anything more
    negative is treated as a misconfiguration.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise LinAlgError(f"expected square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise LinAlgError("non-finite matrix entries")
    _check_symmetric(m, SYM_TOL)
    sym = 0.5 * (m + np.swapaxes(m, -1, -2))
    w, v = np.linalg.eigh(sym)
    scale = 1.0 + np.max(np.abs(w), axis=-1, keepdims=True)
    if np.any(w < -neg_tol * scale):
        raise LinAlgError(f"matrix indefinite (min eigenvalue {float(np.min(w)):.3e})")
    w = np.clip(w, 0.0, None)
    s = (v * np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)
    return 0.5 * (s + np.swapaxes(s, -1, -2))


def right_pseudo_inverse(sigma):
    """Return (sigma^T (sigma sigma^T)^{-1}, condition number of sigma sigma^T)."""
    sigma = np.asarray(sigma, dtype=float)
    a = sigma @ np.swapaxes(sigma, -1, -2)
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    w, v = np.linalg.eigh(a)
    if np.any(w <= 0):
        raise LinAlgError("sigma sigma^T is singular")
    inv = (v / w[..., None, :]) @ np.swapaxes(v, -1, -2)
    cond = np.max(w, axis=-1) / np.min(w, axis=-1)
    return np.swapaxes(sigma, -1, -2) @ inv, cond
