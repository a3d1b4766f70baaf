"""Shared numerics: PRNG, reverse-mode differentiation, resampling.

Dense arrays throughout the package are plain float64 numpy ndarrays
(row-major); 32-bit floats appear only in on-disk formats. Arrays handed
out by public functions are treated as immutable values.
"""

from .autodiff import (Var, add, add_row, backward, col_slice,
                       finite_diff_grad, matmul, mean_sq_err, mul, scale,
                       shift, silu, sub)
from .interp import bilinear_upsample, nearest_upsample
from .rng import Rng, normal_quantile

__all__ = [
    "Rng", "normal_quantile",
    "Var", "backward", "finite_diff_grad",
    "add", "add_row", "col_slice", "matmul", "mean_sq_err", "mul", "scale",
    "shift", "silu", "sub",
    "bilinear_upsample", "nearest_upsample",
]
