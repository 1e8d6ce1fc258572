import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from midrank.core import DimensionMismatch, TooShort
from midrank.features import FeatureMapKind, map_dim, position_coefficients, psi

K = FeatureMapKind


def test_examples():
    np.testing.assert_allclose(psi([[1, 0], [0, 1]], K.MEAN_PAIRWISE_DIFF), [1, -1])
    np.testing.assert_allclose(psi([[1], [2], [3]], K.STACKED_DIFF), [-1, -1])
    # (1-2) + (1-3) + (2-3) over three pairs
    np.testing.assert_allclose(psi([[1], [2], [3]], K.MEAN_PAIRWISE_DIFF), [-4 / 3])
    assert psi(np.ones((2, 10)), K.STACKED).shape == (20,)


def test_full_pairwise_diff_layout():
    out = psi([[1], [2], [4]], K.FULL_PAIRWISE_DIFF)
    np.testing.assert_allclose(out, [1 - 2, 1 - 4, 2 - 4])


@pytest.mark.parametrize("kind", list(K))
@pytest.mark.parametrize("lam", [2, 3, 5])
def test_output_dim(kind, lam):
    x = np.random.default_rng(0).standard_normal((lam, 4))
    assert psi(x, kind).shape == (map_dim(kind, lam, 4),)


def test_errors():
    with pytest.raises(TooShort):
        psi([[1.0]], K.STACKED)
    with pytest.raises(DimensionMismatch):
        psi([[1.0, 2.0], [1.0]], K.STACKED)


vectors = st.integers(2, 6).flatmap(
    lambda lam: arrays(np.float64, (lam, 3), elements=st.floats(-10, 10, allow_nan=False))
)


@given(arrays(np.float64, (2, 3), elements=st.floats(-10, 10)))
def test_pair_antisymmetry(x):
    for kind in (K.MEAN_PAIRWISE_DIFF, K.STACKED_DIFF):
        np.testing.assert_allclose(psi(x[::-1], kind), -psi(x, kind), atol=1e-12)


@given(vectors, arrays(np.float64, 3, elements=st.floats(-10, 10)))
def test_translation_invariance(x, c):
    for kind in (K.MEAN_PAIRWISE_DIFF, K.STACKED_DIFF):
        np.testing.assert_allclose(psi(x + c, kind), psi(x, kind), atol=1e-12)
    if np.max(np.abs(c)) > 1e-6:
        assert not np.array_equal(psi(x + c, K.STACKED), psi(x, K.STACKED))


@given(vectors)
def test_stacked_diff_is_concatenated_adjacent_pairs(x):
    pieces = [psi(x[i : i + 2], K.MEAN_PAIRWISE_DIFF) for i in range(len(x) - 1)]
    np.testing.assert_allclose(psi(x, K.STACKED_DIFF), np.concatenate(pieces))


@settings(max_examples=50)
@given(vectors, st.sampled_from(list(K)), st.integers(0, 2**31))
def test_position_coefficients_reproduce_linear_response(x, kind, seed):
    lam, d = x.shape
    theta = np.random.default_rng(seed).standard_normal(map_dim(kind, lam, d))
    W = position_coefficients(theta, kind, lam, d)
    assert W.shape == (lam, d)
    assert np.einsum("ad,ad->", W, x) == pytest.approx(theta @ psi(x, kind), rel=1e-9, abs=1e-9)
