"""Noise schedules and timestep subsets.

Indexing convention: timesteps are stored 0-indexed, t in [0, T-1]. The
cumulative signal coefficient ᾱ is kept as an array of length T+1 with a
leading virtual entry ᾱ = 1 for the clean-data endpoint, so
``abar(t) == alpha_bar[t + 1]`` and the sentinel ``CLEAN = -1`` addresses
the clean endpoint uniformly. ᾱ satisfies ᾱ_t = ᾱ_{t-1} * (1 - β_t) and is
strictly decreasing in (0, 1].

Subsets: for a step budget S and scheduling policy g(u) on [0, 1], the
0-indexed subset entries are

    τ_i = ceil(g(i / S) * T) - 1,   i = 1..S,

deduplicated ascending (the uniform policy is evaluated in exact integer
arithmetic). This rounding realization is pinned by the uniform case
T=1000, S=3 -> [333, 666, 999]; for the non-uniform policies it is our
convention, since no published subset fixes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CLEAN = -1  # virtual clean-data endpoint (ᾱ = 1); start of inversion, end of sampling

POLICIES = {
    "uniform": lambda u: u,
    "quad": lambda u: u * u,
    "cube": lambda u: u ** 3,
    "exp": lambda u: math.expm1(5.0 * u) / math.expm1(5.0),
}


@dataclass(frozen=True)
class NoiseSchedule:
    """β sequence and cumulative ᾱ values of a diffusion process."""

    T: int
    beta: np.ndarray        # shape (T,), β for 0-indexed steps
    alpha_bar: np.ndarray   # shape (T+1,), [1, ᾱ_1, ..., ᾱ_T]

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        abar = np.asarray(self.alpha_bar, dtype=np.float64)
        if beta.shape != (self.T,) or abar.shape != (self.T + 1,):
            raise ValueError("inconsistent schedule lengths")
        if abar[0] != 1.0 or np.any(np.diff(abar) >= 0) or np.any(abar <= 0):
            raise ValueError("alpha_bar must start at 1, stay positive and strictly decrease")
        beta.flags.writeable = False
        abar.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", abar)

    def abar(self, t: int) -> float:
        """ᾱ at 0-indexed step t; t = CLEAN gives the clean endpoint (1.0)."""
        if not (CLEAN <= t < self.T):
            raise ValueError(f"timestep {t} outside [{CLEAN}, {self.T - 1}]")
        return float(self.alpha_bar[t + 1])

    def p_coord(self, t: int) -> float:
        """ODE time coordinate p(t) = √(1/ᾱ_t - 1); the deterministic update
        is a Euler step of dy = ε dp in the coordinates y = x/√ᾱ, p."""
        return math.sqrt(1.0 / self.abar(t) - 1.0)


def linear_schedule(T: int, beta1: float = 1e-4, betaT: float = 0.02) -> NoiseSchedule:
    """Linear β schedule from beta1 to betaT over T steps."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta1 <= betaT < 1.0):
        raise ValueError("require 0 < beta1 <= betaT < 1")
    beta = np.linspace(beta1, betaT, T)
    alpha_bar = np.empty(T + 1)
    alpha_bar[0] = 1.0
    alpha_bar[1:] = np.cumprod(1.0 - beta)
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar)


@dataclass(frozen=True)
class TimestepSubset:
    """Strictly ascending 0-indexed timesteps ending at T-1."""

    taus: tuple[int, ...]
    policy: str = "uniform"
    T: int = field(default=0)

    def __post_init__(self):
        taus = tuple(int(t) for t in self.taus)
        if not taus:
            raise ValueError("subset must be non-empty")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("subset must be strictly ascending")
        if taus[0] < 0:
            raise ValueError("timesteps must be non-negative")
        if self.T and taus[-1] != self.T - 1:
            raise ValueError("subset must end at the last trained step")
        object.__setattr__(self, "taus", taus)

    def __len__(self) -> int:
        return len(self.taus)


def make_subset(T: int, S: int, policy: str = "uniform") -> TimestepSubset:
    """Build the S-step subset for the given policy (see module docstring)."""
    if not 1 <= S <= T:
        raise ValueError(f"require 1 <= S <= T, got S={S}, T={T}")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {sorted(POLICIES)}")
    if policy == "uniform":
        raw = [-((-i * T) // S) - 1 for i in range(1, S + 1)]  # exact ceil(i*T/S) - 1
    else:
        g = POLICIES[policy]
        raw = [min(T, max(1, math.ceil(g(i / S) * T))) - 1 for i in range(1, S + 1)]
    taus = sorted(set(raw))
    return TimestepSubset(taus=tuple(taus), policy=policy, T=T)
