"""Independent oracle for the inversion contraction factor.

With standard-normal data the exact noise predictor is
eps(x, t) = sqrt(1 - abar_t) * x, so every deterministic invert step is a
scalar multiplication and the whole inversion contracts the input by

    lambda = prod over steps (a -> b, eval at e = max(a, 0)) of
        sqrt(abar_b) * (1 - sqrt((1-abar_a)(1-abar_e))) / sqrt(abar_a)
        + sqrt((1-abar_b)(1-abar_e))

(the first step starts at the clean endpoint, abar = 1, with the
evaluation time clamped to step 0). Everything below is recomputed from
scratch in plain Python: the schedule as an explicit product loop and the
subsets from the rounding formula tau_i = ceil(g(i/S)*T) - 1, so this file
shares no code with the package. Run as a script to print the frozen
table used by the tests.
"""

import math
from fractions import Fraction


def alpha_bar_table(T=1000, b1=1e-4, bT=0.02):
    abar = [1.0]
    for t in range(T):
        beta = b1 + (bT - b1) * t / (T - 1)
        abar.append(abar[-1] * (1.0 - beta))
    return abar  # abar[t+1] is the value at 0-indexed step t; abar[0] is clean


def subset_taus(T, S, policy):
    g = {
        "uniform": lambda u: u,
        "quad": lambda u: u * u,
        "cube": lambda u: u ** 3,
        "exp": lambda u: math.expm1(5 * u) / math.expm1(5.0),
    }[policy]
    taus = []
    for i in range(1, S + 1):
        if policy == "uniform":
            tau = math.ceil(Fraction(i * T, S)) - 1
        else:
            tau = min(T, max(1, math.ceil(g(i / S) * T))) - 1
        taus.append(tau)
    return sorted(set(taus))


def lambda_factor(T, b1, bT, taus):
    abar = alpha_bar_table(T, b1, bT)

    def a(t):
        return abar[t + 1]

    lam = 1.0
    prev = -1
    for tau in taus:
        aa = a(prev)
        ab = a(tau)
        ae = a(max(prev, 0))
        f = (1.0 - math.sqrt((1.0 - aa) * (1.0 - ae))) / math.sqrt(aa)
        lam *= math.sqrt(ab) * f + math.sqrt((1.0 - ab) * (1.0 - ae))
        prev = tau
    return lam


def build_table():
    out = {}
    for policy in ("uniform", "quad", "cube", "exp"):
        for S in (3, 10, 1000):
            taus = subset_taus(1000, S, policy)
            out[(policy, S)] = (tuple(taus[:2]) + (len(taus),), lambda_factor(1000, 1e-4, 0.02, taus))
    return out


if __name__ == "__main__":
    print("LAMBDA_TABLE = {")
    for (policy, S), (_, lam) in build_table().items():
        print(f"    ({policy!r}, {S}): {lam!r},")
    print("}")
