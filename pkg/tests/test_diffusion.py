import math

import numpy as np
import pytest

from invdiff.diffusion import (CountingModel, ddim_invert_step, ddim_reverse_step,
                               ddim_sample, invert, q_sample, reconstruct)
from invdiff.epsnet import AnalyticGaussianModel
from invdiff.numerics import Rng
from invdiff.schedule import CLEAN, linear_schedule, make_subset

from lambda_oracle import build_table

# Frozen output of tests/lambda_oracle.py (plain-Python reimplementation of
# the schedule, the subsets, and the per-step contraction product) for the
# default schedule T=1000, beta 1e-4 -> 0.02.
LAMBDA_TABLE = {
    ("uniform", 3): 0.5015849793807585,
    ("uniform", 10): 0.8321793728987246,
    ("uniform", 1000): 0.9982241114179978,
    ("quad", 3): 0.5883418418456315,
    ("quad", 10): 0.8541269844863886,
    ("quad", 1000): 0.9979733940272588,
    ("cube", 3): 0.5641718032706473,
    ("cube", 10): 0.8295894391554908,
    ("cube", 1000): 0.9976932545892709,
    ("exp", 3): 0.4893702289947701,
    ("exp", 10): 0.8135385211531024,
    ("exp", 1000): 0.9974168800527832,
}

SCHED = linear_schedule(1000)


class ZeroModel:
    """Stub predicting eps = 0 everywhere."""

    def __init__(self, sched):
        self.sched = sched

    def predict(self, x, t):
        return np.zeros_like(x)


class ZeroNoiseRng:
    """Stand-in rng whose Gaussian draws are all zero."""

    def normal(self, size=None):
        return np.zeros(size) if size is not None else 0.0


def test_frozen_lambda_table_matches_oracle_script():
    table = build_table()
    for key, lam in LAMBDA_TABLE.items():
        assert table[key][1] == pytest.approx(lam, abs=1e-15)


def test_q_sample_zero_noise():
    x0 = Rng(0).normal((2, 3, 3))
    out = q_sample(SCHED, x0, 500, np.zeros_like(x0))
    assert np.allclose(out, math.sqrt(SCHED.abar(500)) * x0, atol=0, rtol=0)


def test_q_sample_near_identity_at_first_step():
    x0 = Rng(1).normal((2, 3, 3))
    eps = Rng(2).normal((2, 3, 3))
    out = q_sample(SCHED, x0, 0, eps)
    # abar_0idx(0) = 0.9999, so the perturbation is ~1e-2 * ||eps||
    assert np.linalg.norm(out - x0) < 2e-2 * np.linalg.norm(eps) + 1e-4 * np.linalg.norm(x0)


def test_q_sample_variance_matches_oracle():
    # Monte-Carlo oracle: per-element variance of q_sample(0, t, eps) is 1 - abar_t.
    rng = Rng(3)
    t = 700
    n = 100_000
    draws = q_sample(SCHED, np.zeros((n, 1, 1)), np.full(n, t), rng.normal((n, 1, 1)))
    target = 1.0 - SCHED.abar(t)
    sd = math.sqrt(2.0 / n) * target  # sd of the variance estimator
    assert abs(draws.var() - target) < 3 * sd


def test_q_sample_shape_mismatch():
    with pytest.raises(ValueError):
        q_sample(SCHED, np.zeros((2, 2, 2)), 10, np.zeros((2, 2, 3)))


def test_q_sample_rejects_clean_endpoint():
    with pytest.raises(ValueError):
        q_sample(SCHED, np.zeros((1, 1, 1)), CLEAN, np.zeros((1, 1, 1)))


def test_reverse_step_zero_stub_rescales():
    model = ZeroModel(SCHED)
    x = Rng(4).normal((2, 2, 2))
    out = ddim_reverse_step(model, x, 800, 300)
    factor = math.sqrt(SCHED.abar(300) / SCHED.abar(800))
    assert np.allclose(out, factor * x, rtol=1e-14)


def test_reverse_step_equal_timesteps_identity():
    model = AnalyticGaussianModel(SCHED)
    x = Rng(5).normal((2, 2, 2))
    assert np.allclose(ddim_reverse_step(model, x, 500, 500), x, rtol=1e-12)


def test_reverse_step_rejects_ascending():
    with pytest.raises(ValueError):
        ddim_reverse_step(ZeroModel(SCHED), np.zeros((1, 1, 1)), 300, 400)


def test_invert_step_rejects_descending():
    with pytest.raises(ValueError):
        ddim_invert_step(ZeroModel(SCHED), np.zeros((1, 1, 1)), 400, 300)


def test_steps_analytic_closed_form():
    # Substituting eps* = sqrt(1-abar)*x into the update gives the scalar
    # factor sqrt(abar_i*abar_j) + sqrt((1-abar_i)(1-abar_j)).
    model = AnalyticGaussianModel(SCHED)
    x = Rng(6).normal((3, 2, 2))
    for a, b in [(700, 200), (999, 0)]:
        fac = math.sqrt(SCHED.abar(a) * SCHED.abar(b)) + \
            math.sqrt((1 - SCHED.abar(a)) * (1 - SCHED.abar(b)))
        assert np.allclose(ddim_reverse_step(model, x, a, b), fac * x, rtol=1e-12)
    for a, b in [(200, 700), (0, 999)]:
        fac = math.sqrt(SCHED.abar(a) * SCHED.abar(b)) + \
            math.sqrt((1 - SCHED.abar(a)) * (1 - SCHED.abar(b)))
        assert np.allclose(ddim_invert_step(model, x, a, b), fac * x, rtol=1e-12)


def test_invert_step_equal_identity():
    model = AnalyticGaussianModel(SCHED)
    x = Rng(7).normal((2, 2, 2))
    assert np.allclose(ddim_invert_step(model, x, 123, 123), x, rtol=1e-12)


def test_step_is_euler_in_ode_coordinates():
    # x_b = sqrt(abar_b) * (y_a + (p_b - p_a) * eps) with y = x/sqrt(abar),
    # p = sqrt(1/abar - 1): the update is a forward Euler step of dy = eps dp.
    model = AnalyticGaussianModel(SCHED)
    x = Rng(30).normal((2, 3, 3))
    a, b = 200, 700
    eps = model.predict(x, a)
    y_a = x / math.sqrt(SCHED.abar(a))
    y_b = y_a + (SCHED.p_coord(b) - SCHED.p_coord(a)) * eps
    expected = math.sqrt(SCHED.abar(b)) * y_b
    assert np.allclose(ddim_invert_step(model, x, a, b), expected, rtol=1e-12)


def test_ddim_sample_single_step_is_one_reverse_step():
    model = AnalyticGaussianModel(SCHED)
    sub = make_subset(1000, 1)
    x = Rng(8).normal((2, 2, 2))
    assert np.array_equal(ddim_sample(model, x, sub),
                          ddim_reverse_step(model, x, 999, CLEAN))


def test_ddim_sample_zero_stub():
    model = ZeroModel(SCHED)
    sub = make_subset(1000, 4)
    x = Rng(9).normal((2, 2, 2))
    out = ddim_sample(model, x, sub)
    assert np.allclose(out, x / math.sqrt(SCHED.abar(999)), rtol=1e-12)


def test_ddim_sample_distribution_matches_data_marginal():
    # Distributional oracle: with the exact standard-normal predictor and a
    # fine subset, sampling from N(0, I) lands back on (approximately) the
    # N(0, I) data marginal.
    model = AnalyticGaussianModel(SCHED)
    sub = make_subset(1000, 1000)
    rng = Rng(10)
    outs = [ddim_sample(model, rng.normal((16, 25, 25)), sub) for _ in range(10)]
    vals = np.concatenate([o.reshape(-1) for o in outs])
    m = vals.size
    assert abs(vals.mean()) < 3 / math.sqrt(m)
    assert abs(vals.var() - 1.0) < 3 * math.sqrt(2.0 / m)


def test_invert_zero_stub_telescopes():
    model = ZeroModel(SCHED)
    sub = make_subset(1000, 5)
    z0 = Rng(11).normal((2, 2, 2))
    assert np.allclose(invert(model, z0, sub), math.sqrt(SCHED.abar(999)) * z0, rtol=1e-12)


@pytest.mark.parametrize("policy", ["uniform", "quad", "cube", "exp"])
@pytest.mark.parametrize("S", [3, 10, 1000])
def test_invert_lambda_contraction(policy, S):
    model = AnalyticGaussianModel(SCHED)
    sub = make_subset(1000, S, policy)
    z0 = Rng(12).normal((4, 4, 4))
    out = invert(model, z0, sub)
    lam = LAMBDA_TABLE[(policy, S)]
    assert np.max(np.abs(out - lam * z0)) < 1e-9


def test_invert_nfe_is_subset_length():
    counting = CountingModel(AnalyticGaussianModel(SCHED))
    sub = make_subset(1000, 3)
    invert(counting, Rng(13).normal((2, 2, 2)), sub)
    assert counting.nfe == 3


def test_sample_nfe_is_subset_length():
    counting = CountingModel(AnalyticGaussianModel(SCHED))
    ddim_sample(counting, Rng(14).normal((2, 2, 2)), make_subset(1000, 7))
    assert counting.nfe == 7


def test_reconstruct_nfe_is_ceil_rs():
    counting = CountingModel(AnalyticGaussianModel(SCHED))
    reconstruct(counting, Rng(15).normal((2, 2, 2)), make_subset(1000, 10), 0.4, Rng(16))
    assert counting.nfe == 4


def test_reconstruct_zero_noise_zero_model_is_identity():
    model = ZeroModel(SCHED)
    z0 = Rng(17).normal((2, 2, 2))
    out = reconstruct(model, z0, make_subset(1000, 3), 1 / 3, ZeroNoiseRng())
    assert np.allclose(out, z0, rtol=1e-12)


def test_reconstruct_deterministic_given_seed():
    model = AnalyticGaussianModel(SCHED)
    z0 = Rng(18).normal((2, 2, 2))
    sub = make_subset(1000, 10)
    a = reconstruct(model, z0, sub, 0.4, Rng(99, 5))
    b = reconstruct(model, z0, sub, 0.4, Rng(99, 5))
    assert np.array_equal(a, b)


def test_reconstruct_infeasible_ratio():
    model = ZeroModel(SCHED)
    with pytest.raises(ValueError):
        reconstruct(model, np.zeros((1, 1, 1)), make_subset(1000, 3), 0.1, Rng(0))
    with pytest.raises(ValueError):
        reconstruct(model, np.zeros((1, 1, 1)), make_subset(1000, 3), 1.5, Rng(0))


def test_reconstruct_error_matches_linear_recursion_oracle():
    # Monte-Carlo oracle: with the standard-normal analytic model every step
    # is scalar, so zhat = P*(sqrt(abar_k) z0 + sqrt(1-abar_k) n) with P the
    # product of reverse-step factors. Hence
    #   E||zhat - z0||^2 = (P*sqrt(abar_k)-1)^2 ||z0||^2 + P^2 (1-abar_k) d.
    model = AnalyticGaussianModel(SCHED)
    sub = make_subset(1000, 10)
    r = 0.4
    k = 4
    taus = sub.taus
    abar_k = SCHED.abar(taus[k - 1])
    # reverse factors computed directly from the schedule array
    path = list(taus[:k][::-1]) + [CLEAN]
    P = 1.0
    for a, b in zip(path, path[1:]):
        P *= math.sqrt(SCHED.abar(a) * SCHED.abar(b)) + \
            math.sqrt((1 - SCHED.abar(a)) * (1 - SCHED.abar(b)))
    z0 = Rng(19).normal((4, 4, 4))
    d = z0.size
    expected = (P * math.sqrt(abar_k) - 1) ** 2 * float(np.sum(z0 ** 2)) \
        + P ** 2 * (1 - abar_k) * d
    trials = 3000
    noise_rng = Rng(20)
    errs = np.array([
        float(np.sum((reconstruct(model, z0, sub, r, noise_rng.child(i)) - z0) ** 2))
        for i in range(trials)
    ])
    sd = errs.std() / math.sqrt(trials)
    assert abs(errs.mean() - expected) < 4 * sd


def test_roundtrip_convergence_monotone():
    model = AnalyticGaussianModel(SCHED)
    z0 = Rng(21).normal((4, 4, 4))
    errs = []
    for S in (10, 100, 1000):
        sub = make_subset(1000, S)
        back = ddim_sample(model, invert(model, z0, sub), sub)
        errs.append(np.linalg.norm(back - z0) / np.linalg.norm(z0))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-2
