"""Corner-aligned 2-D resampling.

Convention (documented so tests can be exact): output pixel (i, j) of an
H x W upsample of an h x w map reads source coordinate

    y = i * (h - 1) / (H - 1),    x = j * (w - 1) / (W - 1)

(0 when the output axis has a single pixel), i.e. the four extreme grid
points map exactly onto the four output corners. Bilinear weights are the
usual separable fractional parts, so every output value is a convex
combination of inputs and stays inside [min, max] of the source map.
"""

from __future__ import annotations

import numpy as np


def _axis_coords(n_in: int, n_out: int):
    if n_out == 1 or n_in == 1:
        src = np.zeros(n_out)
    else:
        src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def bilinear_upsample(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear upsample of an h x w map to out_h x out_w (corner-aligned)."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {m.shape}")
    h, w = m.shape
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be positive")
    if out_h < h or out_w < w:
        raise ValueError("only upsampling is supported (target >= source dims)")
    r0, r1, fy = _axis_coords(h, out_h)
    c0, c1, fx = _axis_coords(w, out_w)
    rows = m[r0, :] * (1.0 - fy)[:, None] + m[r1, :] * fy[:, None]
    return rows[:, c0] * (1.0 - fx) + rows[:, c1] * fx


def nearest_upsample(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour upsample under the same corner alignment.

    Used for binary masks, where interpolation would produce fractions.
    """
    m = np.asarray(m)
    h, w = m.shape
    if out_h < h or out_w < w or out_h < 1 or out_w < 1:
        raise ValueError("invalid target dimensions")
    r0, r1, fy = _axis_coords(h, out_h)
    c0, c1, fx = _axis_coords(w, out_w)
    rows = np.where(fy < 0.5, r0, r1)
    cols = np.where(fx < 0.5, c0, c1)
    return m[np.ix_(rows, cols)]
