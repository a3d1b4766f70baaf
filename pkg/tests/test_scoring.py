import math

import numpy as np
import pytest
from scipy.special import gammaln

from invdiff.numerics import Rng
from invdiff.scoring import (AnomalyResult, fit_location_stats, image_score,
                             mahalanobis_score, nll_map, norm_map,
                             anomaly_result, recon_score)


def test_norm_map_zero_latent():
    assert np.all(norm_map(np.zeros((4, 3, 3))) == 0.0)


def test_norm_map_3_4_5():
    z = np.zeros((2, 2, 2))
    z[0, 1, 0] = 3.0
    z[1, 1, 0] = 4.0
    assert norm_map(z)[1, 0] == 5.0


def test_norm_map_chi_mean():
    # Oracle: ||N(0, I_C)||_2 is chi-distributed with mean
    # sqrt(2) * Gamma((C+1)/2) / Gamma(C/2).
    c = 6
    z = Rng(1).normal((c, 400, 250))
    vals = norm_map(z)
    target = math.sqrt(2.0) * math.exp(gammaln((c + 1) / 2) - gammaln(c / 2))
    sd = vals.std() / math.sqrt(vals.size)
    assert abs(vals.mean() - target) < 4 * sd


def test_norm_map_scale_equivariance():
    z = Rng(2).normal((3, 4, 4))
    for a in (2.0, -0.5):
        assert np.allclose(norm_map(a * z), abs(a) * norm_map(z), rtol=1e-12)


def test_nll_map_trivial_values():
    z = np.zeros((4, 1, 1))
    assert nll_map(z)[0, 0] == pytest.approx(2.0 * math.log(2 * math.pi), rel=1e-15)
    z1 = np.ones((1, 1, 1))
    assert nll_map(z1)[0, 0] == pytest.approx(0.5 + 0.5 * math.log(2 * math.pi), rel=1e-15)


def test_nll_map_matches_direct_density():
    # Independently coded Gaussian log-density oracle.
    z = Rng(3).normal((5, 3, 2))
    got = nll_map(z)
    for i in range(3):
        for j in range(2):
            v = z[:, i, j]
            ref = -(-0.5 * float(v @ v) - 0.5 * len(v) * math.log(2 * math.pi))
            assert abs(got[i, j] - ref) < 1e-12


def test_image_score_combined_arithmetic():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert image_score(a, mode="combined") == 13.0
    assert image_score(np.full((3, 3), 2.0), mode="diff") == 0.0


def test_image_score_nll_is_density_sum():
    z = Rng(4).normal((4, 3, 3))
    assert image_score(None, z, mode="nll") == pytest.approx(float(nll_map(z).sum()), abs=1e-9)
    with pytest.raises(ValueError):
        image_score(np.zeros((2, 2)), None, mode="nll")
    with pytest.raises(ValueError):
        image_score(np.zeros((2, 2)), mode="best")


def test_image_score_scale_behavior():
    z = Rng(5).normal((3, 4, 4))
    a = norm_map(z)
    for c in (2.0, 0.25):
        assert image_score(c * a, mode="diff") == pytest.approx(
            c * image_score(a, mode="diff"), rel=1e-12)
        assert image_score(c * a, mode="combined") == pytest.approx(
            c * image_score(a, mode="combined"), rel=1e-12)


def test_anomaly_result_identity_resolution():
    z = Rng(6).normal((3, 4, 4))
    res = anomaly_result(z, 4, 4, mode="combined")
    assert np.array_equal(res.map, res.map_low)
    assert res.s == image_score(res.map_low, mode="combined")


def test_anomaly_result_zero_latent():
    res = anomaly_result(np.zeros((2, 3, 3)), 6, 6, mode="combined")
    assert res.s == 0.0
    assert np.all(res.map == 0.0)


def test_anomaly_result_argmax_alignment():
    # A single hot pixel at (0, 0) must stay the argmax after upsampling,
    # at the corner the alignment convention maps it to.
    z = np.zeros((1, 4, 4))
    z[0, 0, 0] = 5.0
    res = anomaly_result(z, 16, 16, mode="combined")
    assert np.unravel_index(np.argmax(res.map), res.map.shape) == (0, 0)
    assert np.unravel_index(np.argmax(res.map_low), res.map_low.shape) == (0, 0)


def test_anomaly_result_argmax_alignment_general():
    # When source pixels land exactly on the output lattice
    # ((H-1) divisible by (h-1)), the upsampled argmax is the mapped
    # low-res argmax: every other output value is a convex combination.
    rng = Rng(20)
    for trial in range(20):
        z = rng.normal((3, 4, 5))
        res = anomaly_result(z, 16, 17, mode="combined")  # scales 5 and 4
        iy, ix = np.unravel_index(np.argmax(res.map_low), (4, 5))
        oy, ox = np.unravel_index(np.argmax(res.map), (16, 17))
        assert (oy, ox) == (iy * 5, ix * 4)


def test_anomaly_result_consistency_combined():
    z = Rng(7).normal((3, 5, 5))
    res = anomaly_result(z, 10, 10, mode="combined")
    recomputed = res.map_low.max() - res.map_low.min() + res.map_low.sum()
    assert res.s == recomputed


def test_recon_score_identical_inputs():
    z = Rng(8).normal((3, 4, 4))
    res = recon_score(z, z, 8, 8)
    assert res.s == 0.0
    assert np.all(res.map == 0.0)


def test_recon_score_peak_at_perturbed_pixel():
    z = Rng(9).normal((3, 4, 4))
    zh = z.copy()
    zh[:, 2, 1] += 3.0
    res = recon_score(z, zh, 4, 4)
    assert np.unravel_index(np.argmax(res.map_low), (4, 4)) == (2, 1)
    assert res.s == res.map_low[2, 1]


def test_recon_score_matches_elementwise_oracle():
    rng = Rng(10)
    z, zh = rng.normal((4, 3, 3)), rng.normal((4, 3, 3))
    res = recon_score(z, zh, 3, 3)
    for i in range(3):
        for j in range(3):
            ref = float(np.mean((z[:, i, j] - zh[:, i, j]) ** 2))
            assert abs(res.map_low[i, j] - ref) < 1e-12
    with pytest.raises(ValueError):
        recon_score(z, zh[:2], 3, 3)


def test_mahalanobis_zero_at_mean():
    normals = Rng(11).normal((50, 3, 4, 4)) + 2.0
    stats = fit_location_stats(normals)
    res = mahalanobis_score(stats, stats.mean, 4, 4)
    assert np.allclose(res.map_low, 0.0, atol=1e-18)


def test_mahalanobis_unit_deviation_unit_variance():
    rng = Rng(12)
    normals = rng.normal((20000, 2, 2, 2))
    stats = fit_location_stats(normals)
    z = stats.mean.copy()
    z[0, 1, 1] += math.sqrt(stats.var[0, 1, 1])
    res = mahalanobis_score(stats, z, 2, 2)
    assert res.map_low[1, 1] == pytest.approx(1.0, abs=1e-12)


def test_mahalanobis_matches_bruteforce():
    rng = Rng(13)
    normals = rng.normal((64, 3, 3, 3)) * 1.7 + 0.3
    stats = fit_location_stats(normals)
    z = rng.normal((3, 3, 3))
    res = mahalanobis_score(stats, z, 3, 3)
    mu = normals.mean(axis=0)
    var = np.maximum(normals.var(axis=0), 1e-6)
    for i in range(3):
        for j in range(3):
            ref = float(np.sum((z[:, i, j] - mu[:, i, j]) ** 2 / var[:, i, j]))
            assert abs(res.map_low[i, j] - ref) < 1e-9


def test_mahalanobis_variance_floor_warns():
    normals = np.zeros((5, 1, 2, 2))
    with pytest.warns(RuntimeWarning):
        stats = fit_location_stats(normals)
    assert np.all(stats.var == 1e-6)
    with pytest.raises(ValueError):
        fit_location_stats(np.zeros((1, 1, 2, 2)))


def test_result_is_frozen():
    res = anomaly_result(np.zeros((1, 2, 2)), 2, 2)
    assert isinstance(res, AnomalyResult)
    with pytest.raises(AttributeError):
        res.s = 1.0
