import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invdiff.numerics import Rng, bilinear_upsample, nearest_upsample


def test_constant_extension_from_single_pixel():
    out = bilinear_upsample(np.array([[2.5]]), 4, 4)
    assert out.shape == (4, 4)
    assert np.all(out == 2.5)


def test_identity_when_dims_match():
    m = Rng(1).normal((5, 7))
    assert np.array_equal(bilinear_upsample(m, 5, 7), m)


def test_two_by_two_ramp_hand_weights():
    # Corner-aligned: source x-coordinate of column j is j*(w-1)/(W-1) = j/3,
    # so each output row is [0, 1/3, 2/3, 1]; both input rows are equal so
    # the vertical pass is the identity.
    m = np.array([[0.0, 1.0], [0.0, 1.0]])
    out = bilinear_upsample(m, 4, 4)
    expected_row = np.array([0.0, 1 / 3, 2 / 3, 1.0])
    assert np.allclose(out, np.tile(expected_row, (4, 1)), atol=1e-15)


def test_corners_map_to_corners():
    m = Rng(2).normal((3, 4))
    out = bilinear_upsample(m, 9, 13)
    assert out[0, 0] == m[0, 0]
    assert out[0, -1] == m[0, -1]
    assert out[-1, 0] == m[-1, 0]
    assert out[-1, -1] == m[-1, -1]


def test_invalid_targets():
    m = np.zeros((2, 2))
    with pytest.raises(ValueError):
        bilinear_upsample(m, 0, 4)
    with pytest.raises(ValueError):
        bilinear_upsample(m, 4, 0)
    with pytest.raises(ValueError):
        bilinear_upsample(m, 1, 4)  # downsampling not supported


@given(h=st.integers(1, 6), w=st.integers(1, 6),
       hscale=st.integers(1, 4), wscale=st.integers(1, 4),
       seed=st.integers(0, 1000))
@settings(max_examples=60, deadline=None)
def test_monotone_bounded(h, w, hscale, wscale, seed):
    m = Rng(seed).normal((h, w))
    out = bilinear_upsample(m, h * hscale, w * wscale)
    assert out.min() >= m.min() - 1e-12
    assert out.max() <= m.max() + 1e-12


def test_nearest_upsample_preserves_binary_values():
    mask = np.array([[0, 1], [1, 0]])
    up = nearest_upsample(mask, 6, 6)
    assert set(np.unique(up)) <= {0, 1}
    assert up[0, 0] == 0 and up[0, -1] == 1 and up[-1, 0] == 1 and up[-1, -1] == 0
