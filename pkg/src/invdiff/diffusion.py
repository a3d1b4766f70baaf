"""Forward noising, deterministic DDIM stepping, few-step latent inversion,
and the noise-then-denoise reconstruction baseline.

A model here is anything with ``predict(x, t) -> eps`` of matching shape and
a ``sched`` attribute (its NoiseSchedule). The deterministic update between
two timesteps a -> b is

    x_b = √ᾱ_b · f(x_a) + √(1-ᾱ_b) · ε(x_a, t_eval)
    f(x) = (x - √(1-ᾱ_a) · ε) / √ᾱ_a ,

an Euler step of the underlying probability-flow ODE in the coordinates
y = x/√ᾱ, p = √(1/ᾱ - 1). Stepping down (b < a) denoises, stepping up
(b > a) inverts. Both directions evaluate ε at the step's starting time;
when the start is the virtual clean endpoint (ᾱ = 1, sentinel CLEAN), the
evaluation time is clamped to the smallest trained step, t = 0.

Inversion along a subset [τ_1..τ_S] costs exactly S model evaluations, as
does sampling; wrap a model in :class:`CountingModel` to assert it.
"""

from __future__ import annotations

import math

import numpy as np

from .numerics import Rng
from .schedule import CLEAN, NoiseSchedule, TimestepSubset


class CountingModel:
    """Pass-through wrapper counting model evaluations (``nfe``)."""

    def __init__(self, inner):
        self.inner = inner
        self.nfe = 0

    @property
    def sched(self):
        return self.inner.sched

    def predict(self, x, t):
        self.nfe += 1
        return self.inner.predict(x, t)


def q_sample(sched: NoiseSchedule, x0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
    """Draw from q(x_t | x_0) = N(√ᾱ_t x_0, (1-ᾱ_t) I) with the given noise.

    ``t`` may be a scalar step, or an integer array of per-sample steps when
    x0 carries a leading batch axis.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"noise shape {eps.shape} != data shape {x0.shape}")
    if np.isscalar(t) or np.ndim(t) == 0:
        ti = int(t)
        if ti < 0:
            raise ValueError("q_sample requires a trained timestep (t >= 0)")
        abar = sched.abar(ti)
        return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= sched.T):
        raise ValueError("timesteps outside trained range")
    abar = sched.alpha_bar[t + 1].reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def _step(model, x: np.ndarray, t_from: int, t_to: int) -> np.ndarray:
    """One deterministic update from t_from to t_to (either direction)."""
    sched = model.sched
    abar_a = sched.abar(t_from)
    abar_b = sched.abar(t_to)
    eps = model.predict(x, max(t_from, 0))
    f = (x - math.sqrt(1.0 - abar_a) * eps) / math.sqrt(abar_a)
    return math.sqrt(abar_b) * f + math.sqrt(1.0 - abar_b) * eps


def ddim_reverse_step(model, x: np.ndarray, tau_i: int, tau_prev: int) -> np.ndarray:
    """Denoising update x_{τ_i} -> x_{τ_prev} (τ_prev may be CLEAN)."""
    if tau_prev > tau_i:
        raise ValueError(f"reverse step requires tau_prev <= tau_i, got {tau_prev} > {tau_i}")
    if tau_i < 0:
        raise ValueError("reverse step must start at a trained timestep")
    return _step(model, x, tau_i, tau_prev)


def ddim_invert_step(model, x: np.ndarray, tau_i: int, tau_next: int) -> np.ndarray:
    """Noising update x_{τ_i} -> x_{τ_next} (τ_i may be CLEAN)."""
    if tau_next < tau_i:
        raise ValueError(f"invert step requires tau_next >= tau_i, got {tau_next} < {tau_i}")
    if tau_i < CLEAN:
        raise ValueError("invalid start timestep")
    return _step(model, x, tau_i, tau_next)


def ddim_sample(model, xT: np.ndarray, subset: TimestepSubset) -> np.ndarray:
    """Integrate from the terminal latent down to the clean endpoint."""
    x = np.asarray(xT, dtype=np.float64)
    path = list(subset.taus[::-1]) + [CLEAN]
    for a, b in zip(path, path[1:]):
        x = ddim_reverse_step(model, x, a, b)
    return x


def invert(model, z0: np.ndarray, subset: TimestepSubset) -> np.ndarray:
    """Map a clean latent to its terminal latent along the subset."""
    x = np.asarray(z0, dtype=np.float64)
    path = [CLEAN] + list(subset.taus)
    for a, b in zip(path, path[1:]):
        x = ddim_invert_step(model, x, a, b)
    return x


def reconstruct(model, z0: np.ndarray, subset: TimestepSubset, r: float,
                rng: Rng) -> np.ndarray:
    """Noise-then-denoise baseline: perturb to depth r, integrate back.

    The perturbation index is k = ceil(r*S) into the subset; the sample is
    noised to τ_k with fresh Gaussian noise from ``rng`` (stochastic
    q-sampling) and then denoised down [τ_k, ..., τ_1, CLEAN], costing k
    model evaluations. Requires r*S >= 1; shallower ratios select no step.
    """
    if not 0.0 < r <= 1.0:
        raise ValueError("perturbation ratio must be in (0, 1]")
    S = len(subset)
    if r * S < 1.0 - 1e-9:
        raise ValueError(f"ratio {r} with {S} steps selects no perturbation step")
    k = math.ceil(r * S - 1e-9)
    z0 = np.asarray(z0, dtype=np.float64)
    tau_k = subset.taus[k - 1]
    x = q_sample(model.sched, z0, tau_k, rng.normal(z0.shape))
    path = list(subset.taus[:k][::-1]) + [CLEAN]
    for a, b in zip(path, path[1:]):
        x = ddim_reverse_step(model, x, a, b)
    return x
