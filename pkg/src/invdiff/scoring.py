"""Anomaly maps and image scores from terminal latents.

The low-resolution map of a C x h x w latent is either the per-pixel
channel norm

    A[i, j] = || z[:, i, j] ||_2

or the per-pixel negative log-density under N(0, I_C),

    nll[i, j] = 0.5 * ||z[:, i, j]||^2 + (C/2) * ln(2*pi).

Image-level scores on the norm map: ``diff`` is max(A) - min(A) (robust to
the reverse-scoring pathology of plain likelihoods, since anomalies are
sparse and the bulk of pixels stays normal); ``combined`` adds the map sum,
max(A) - min(A) + sum(A); ``nll`` sums the per-pixel NLL, i.e. the
whole-latent negative log-density up to reshaping. norm/diff/combined are
scale-equivariant (scaling the latent by a scales them by |a|); nll is
not, because of its quadratic term and additive constant. Pixel maps are
upsampled to the output resolution with corner-aligned bilinear
interpolation.

Baselines: per-pixel channel-mean squared reconstruction error, and a
diagonal per-location Mahalanobis distance fitted on normal features. Both
use max(map) as the image score.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import bilinear_upsample

MODES = ("nll", "diff", "combined")


@dataclass(frozen=True)
class AnomalyResult:
    """Image-level score plus pixel map at output and native resolution."""

    s: float
    map: np.ndarray       # (H, W)
    map_low: np.ndarray   # (h, w)
    mode: str


def norm_map(z: np.ndarray) -> np.ndarray:
    """Per-pixel Euclidean norm over channels of a C x h x w latent."""
    z = np.asarray(z, dtype=np.float64)
    return np.sqrt(np.sum(z * z, axis=0))


def nll_map(z: np.ndarray) -> np.ndarray:
    """Per-pixel negative log-density under the standard-normal prior."""
    z = np.asarray(z, dtype=np.float64)
    c = z.shape[0]
    return 0.5 * np.sum(z * z, axis=0) + 0.5 * c * math.log(2.0 * math.pi)


def image_score(a_low: np.ndarray, z: np.ndarray | None = None,
                mode: str = "combined") -> float:
    """Image-level score; ``a_low`` is the norm map for diff/combined."""
    if mode == "diff":
        return float(a_low.max() - a_low.min())
    if mode == "combined":
        return float(a_low.max() - a_low.min() + a_low.sum())
    if mode == "nll":
        if z is None:
            raise ValueError("nll scoring needs the latent")
        return float(nll_map(z).sum())
    raise ValueError(f"unknown scoring mode {mode!r}; choose from {MODES}")


def anomaly_result(z: np.ndarray, out_h: int, out_w: int,
                   mode: str = "combined") -> AnomalyResult:
    """Score a terminal latent: build the mode's map, upsample, score."""
    if mode not in MODES:
        raise ValueError(f"unknown scoring mode {mode!r}; choose from {MODES}")
    a_low = nll_map(z) if mode == "nll" else norm_map(z)
    s = image_score(a_low, z, mode)
    return AnomalyResult(s=s, map=bilinear_upsample(a_low, out_h, out_w),
                         map_low=a_low, mode=mode)


def recon_score(z0: np.ndarray, z0_hat: np.ndarray, out_h: int, out_w: int) -> AnomalyResult:
    """Reconstruction baseline: per-pixel channel-mean squared error."""
    z0 = np.asarray(z0, dtype=np.float64)
    z0_hat = np.asarray(z0_hat, dtype=np.float64)
    if z0.shape != z0_hat.shape:
        raise ValueError(f"shape mismatch {z0.shape} vs {z0_hat.shape}")
    a_low = np.mean((z0 - z0_hat) ** 2, axis=0)
    return AnomalyResult(s=float(a_low.max()), map=bilinear_upsample(a_low, out_h, out_w),
                         map_low=a_low, mode="recon")


@dataclass(frozen=True)
class LocationStats:
    """Per-location, per-channel mean and variance of normal features."""

    mean: np.ndarray  # (C, h, w)
    var: np.ndarray   # (C, h, w), floored at VAR_FLOOR

    VAR_FLOOR = 1e-6


def fit_location_stats(normals: np.ndarray) -> LocationStats:
    """Fit diagonal per-location Gaussians on (N, C, h, w) normal features."""
    normals = np.asarray(normals, dtype=np.float64)
    if normals.ndim != 4 or normals.shape[0] < 2:
        raise ValueError("need at least 2 normal samples of shape (N, C, h, w)")
    mean = normals.mean(axis=0)
    var = normals.var(axis=0)
    degenerate = var < LocationStats.VAR_FLOOR
    if np.any(degenerate):
        warnings.warn(f"{int(degenerate.sum())} degenerate variances floored at "
                      f"{LocationStats.VAR_FLOOR}", RuntimeWarning, stacklevel=2)
        var = np.maximum(var, LocationStats.VAR_FLOOR)
    return LocationStats(mean=mean, var=var)


def mahalanobis_score(stats: LocationStats, z: np.ndarray,
                      out_h: int, out_w: int) -> AnomalyResult:
    """Inversion-free baseline: score features directly against the fit."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != stats.mean.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {stats.mean.shape}")
    a_low = np.sum((z - stats.mean) ** 2 / stats.var, axis=0)
    return AnomalyResult(s=float(a_low.max()), map=bilinear_upsample(a_low, out_h, out_w),
                         map_low=a_low, mode="mahalanobis")
