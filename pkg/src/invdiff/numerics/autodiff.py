"""Minimal reverse-mode differentiation over float64 numpy arrays.

Supports exactly the operations the noise-prediction MLP needs: matrix
products, bias/broadcast adds, Hadamard products, affine constants, SiLU,
and a mean-squared-error reduction. Each node stores vector-Jacobian
closures for its parents; ``backward`` runs them in reverse topological
order. Gradients accumulate into ``Var.grad``, so parameter leaves must be
zeroed (``zero_grad``) between steps.

``finite_diff_grad`` at the bottom is the independent gradient oracle: it
only ever calls the supplied function and never touches the tape.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError


class Var:
    """Tape node: a float64 array plus reverse-mode bookkeeping."""

    __slots__ = ("value", "grad", "_parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents  # tuple of (Var, vjp) pairs

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None


def _accum(node: Var, g: np.ndarray):
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64)
    else:
        node.grad = node.grad + g


def backward(root: Var):
    """Backpropagate from a scalar root, filling ``grad`` on every node."""
    if root.value.ndim != 0:
        raise ValueError("backward requires a scalar root")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    root.grad = np.asarray(1.0)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in node._parents:
            _accum(parent, vjp(node.grad))


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def add(a: Var, b: Var) -> Var:
    a, b = _as_var(a), _as_var(b)
    return Var(a.value + b.value, ((a, lambda g: g), (b, lambda g: g)))


def sub(a: Var, b: Var) -> Var:
    a, b = _as_var(a), _as_var(b)
    return Var(a.value - b.value, ((a, lambda g: g), (b, lambda g: -g)))


def mul(a: Var, b: Var) -> Var:
    a, b = _as_var(a), _as_var(b)
    return Var(a.value * b.value,
               ((a, lambda g: g * b.value), (b, lambda g: g * a.value)))


def scale(a: Var, c: float) -> Var:
    a = _as_var(a)
    return Var(a.value * c, ((a, lambda g: g * c),))


def shift(a: Var, c: float) -> Var:
    a = _as_var(a)
    return Var(a.value + c, ((a, lambda g: g),))


def matmul(a: Var, b: Var) -> Var:
    """(n, k) @ (k, m); backward uses the transposed partners."""
    a, b = _as_var(a), _as_var(b)
    return Var(a.value @ b.value,
               ((a, lambda g: g @ b.value.T), (b, lambda g: a.value.T @ g)))


def add_row(a: Var, b: Var) -> Var:
    """Add a length-m row vector to every row of an (n, m) array."""
    a, b = _as_var(a), _as_var(b)
    return Var(a.value + b.value,
               ((a, lambda g: g), (b, lambda g: g.sum(axis=0))))


def col_slice(a: Var, lo: int, hi: int) -> Var:
    """Columns [lo, hi) of an (n, m) array."""
    a = _as_var(a)

    def vjp(g):
        full = np.zeros_like(a.value)
        full[:, lo:hi] = g
        return full

    return Var(a.value[:, lo:hi], ((a, vjp),))


def silu(a: Var) -> Var:
    a = _as_var(a)
    sig = 1.0 / (1.0 + np.exp(-a.value))
    out = a.value * sig
    # d/dx [x*sig(x)] = sig(x) * (1 + x * (1 - sig(x)))
    deriv = sig * (1.0 + a.value * (1.0 - sig))
    return Var(out, ((a, lambda g: g * deriv),))


def mean_sq_err(pred: Var, target: np.ndarray) -> Var:
    """Scalar mean over all elements of (pred - target)**2."""
    pred = _as_var(pred)
    diff = pred.value - np.asarray(target, dtype=np.float64)
    n = diff.size
    return Var((diff * diff).sum() / n, ((pred, lambda g: g * (2.0 / n) * diff),))


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, elementwise.

    Independent of the tape above by construction: it evaluates ``f`` at
    2*x.size perturbed points and combines (f(x+h e_i) - f(x-h e_i)) / 2h.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)  # private copy; caller's array is never perturbed
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite evaluation in finite differences at index {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
