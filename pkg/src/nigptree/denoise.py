"""Unsupervised feature denoising and input-noise variance estimation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

METHODS = ("svd_threshold", "column_smooth", "identity")


@dataclass(frozen=True)
class DenoiseResult:
    clean: np.ndarray
    residual: np.ndarray
    sigma_x: np.ndarray


def noise_variance(residual):
    """Per-column population variance (1/n normalization)."""
    residual = np.asarray(residual, dtype=float)
    if residual.ndim != 2 or residual.shape[0] < 2:
        raise ValueError("residual must be a 2-D array with at least two rows")
    return np.maximum(residual.var(axis=0), 0.0)


def hard_threshold_omega(beta):
    """Gavish-Donoho coefficient for an unknown noise level, aspect ratio ``beta <= 1``."""
    return 0.56 * beta ** 3 - 0.95 * beta ** 2 + 1.82 * beta + 1.43


def svd_threshold(S):
    U, s, Vt = np.linalg.svd(S, full_matrices=False)
    beta = min(S.shape) / max(S.shape)
    tau = hard_threshold_omega(beta) * np.median(s)
    keep = s > tau
    if not keep.any():
        warnings.warn("svd_threshold kept no singular values; with this few columns the "
                      "median-based rank selection sees only signal (try 'smooth:w' or 'none')",
                      RuntimeWarning, stacklevel=3)
    return (U[:, keep] * s[keep]) @ Vt[keep]


def column_smooth(S, window, groups=None):
    """Centered moving average down each column, never crossing a group boundary."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if window >= S.shape[0]:
        raise ValueError(f"window {window} must be smaller than the number of rows {S.shape[0]}")
    out = np.empty_like(S)
    for start, stop in _runs(groups, S.shape[0]):
        out[start:stop] = uniform_filter1d(S[start:stop], size=window, axis=0, mode="nearest")
    return out


def _runs(groups, n):
    if groups is None:
        return [(0, n)]
    groups = np.asarray(groups)
    if groups.shape != (n,):
        raise ValueError(f"groups has shape {groups.shape}, expected ({n},)")
    cuts = np.flatnonzero(groups[1:] != groups[:-1]) + 1
    bounds = np.concatenate([[0], cuts, [n]])
    return list(zip(bounds[:-1], bounds[1:]))


def _exact_split(S, clean):
    # make clean + residual reproduce S bit for bit
    residual = S - clean
    clean = S - residual
    for _ in range(8):
        bad = (clean + residual) != S
        if not bad.any():
            break
        towards = np.where((clean + residual)[bad] < S[bad], np.inf, -np.inf)
        clean[bad] = np.nextafter(clean[bad], towards)
    # entries far below the rounding error of their clean value cannot be
    # split exactly; leave them undenoised
    bad = (clean + residual) != S
    clean[bad], residual[bad] = S[bad], 0.0
    return clean, residual


def denoise(S, method="svd_threshold", window=5, groups=None):
    """Split ``S`` into a denoised part and a residual and estimate the noise variance.

    ``groups`` marks contiguous sequences (e.g. frames of one video); only the
    column smoother uses it.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two rows")
    if method == "identity":
        return DenoiseResult(S.copy(), np.zeros_like(S), np.zeros(S.shape[1]))
    if method == "svd_threshold":
        clean = svd_threshold(S)
    elif method == "column_smooth":
        clean = column_smooth(S, int(window), groups)
    else:
        raise ValueError(f"unknown denoising method {method!r}; choose from {METHODS}")
    clean, residual = _exact_split(S, clean)
    return DenoiseResult(clean, residual, noise_variance(residual))


def parse_denoiser(spec: str):
    """Parse ``"svd"``, ``"smooth:w"`` or ``"none"`` into ``(method, kwargs)``."""
    spec = spec.strip().lower()
    if spec in ("svd", "svd_threshold"):
        return "svd_threshold", {}
    if spec in ("none", "identity"):
        return "identity", {}
    if spec.startswith("smooth"):
        _, _, w = spec.partition(":")
        try:
            window = int(w) if w else 5
        except ValueError:
            raise ValueError(f"bad smoothing window in denoiser spec {spec!r}") from None
        if window < 1 or window % 2 == 0:
            raise ValueError(f"smoothing window must be a positive odd integer, got {window}")
        return "column_smooth", {"window": window}
    raise ValueError(f"unknown denoiser {spec!r}; use 'svd', 'smooth:w' or 'none'")
