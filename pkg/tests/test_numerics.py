import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mia_bench.exceptions import (
    DivergenceUndefinedError,
    InvalidInputError,
    InvalidLabelError,
    InvalidParameterError,
)
from mia_bench.numerics import (
    SeededRng,
    cross_entropy_loss,
    derive_seed,
    gaussian_sample,
    kl_divergence,
    shannon_entropy,
    softmax,
)

# frozen with mpmath at 30 digits
E_OVER_E_PLUS_1 = 0.731058578630004879
ENTROPY_721 = 0.801818552543337309
NEG_LN_09 = 0.105360515657826301


def logit_vectors(min_k=2, max_k=12, bound=50.0):
    return st.integers(min_k, max_k).flatmap(
        lambda k: arrays(np.float64, k, elements=st.floats(-bound, bound, allow_nan=False)))


def prob_vectors(min_k=2, max_k=12):
    return logit_vectors(min_k, max_k, bound=20.0).map(lambda z: softmax(z))


class TestSoftmax:
    def test_uniform_for_equal_logits(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_two_class_closed_form(self):
        np.testing.assert_allclose(softmax([2.0, 1.0]), [E_OVER_E_PLUS_1, 1 - E_OVER_E_PLUS_1], atol=1e-15)

    def test_large_temperature_is_uniform(self):
        np.testing.assert_allclose(softmax([10.0, 0.0], temperature=1e6), [0.5, 0.5], atol=1e-5)

    def test_no_overflow(self):
        p = softmax([1e4, -1e4, 0.0])
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0)

    def test_batched_rows(self):
        Z = np.array([[0.0, 0.0], [2.0, 1.0]])
        np.testing.assert_allclose(softmax(Z)[1], softmax(Z[1]))

    @pytest.mark.parametrize("t", [0.0, -1.0, float("nan"), float("inf")])
    def test_rejects_bad_temperature(self, t):
        with pytest.raises(InvalidParameterError):
            softmax([1.0, 2.0], t)

    @pytest.mark.parametrize("z", [[1.0, float("nan")], [float("inf"), 0.0], [1.0]])
    def test_rejects_bad_logits(self, z):
        with pytest.raises(InvalidInputError):
            softmax(z)

    @given(logit_vectors(), st.floats(0.05, 100.0))
    def test_valid_distribution_and_argmax(self, z, t):
        p = softmax(z, t)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) < 1e-9
        top = np.sort(z)
        if top[-1] - top[-2] > 1e-9 * max(1.0, abs(top[-1])):
            assert np.argmax(p) == np.argmax(z)


class TestEntropy:
    def test_examples(self):
        assert shannon_entropy([0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
        assert shannon_entropy([1.0, 0.0]) == 0.0
        assert shannon_entropy([0.7, 0.2, 0.1]) == pytest.approx(ENTROPY_721, abs=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(InvalidInputError):
            shannon_entropy([0.5, 0.6])

    @given(prob_vectors())
    def test_bounds(self, p):
        h = shannon_entropy(p)
        assert 0.0 <= h <= math.log(len(p))

    @given(prob_vectors())
    def test_max_only_at_uniform(self, p):
        k = len(p)
        if np.max(np.abs(p - 1 / k)) > 1e-3:
            assert shannon_entropy(p) < math.log(k) - 1e-9


class TestKL:
    def test_identical_is_zero(self):
        assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_one_hot_vs_uniform(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)

    def test_support_violation(self):
        with pytest.raises(DivergenceUndefinedError):
            kl_divergence([0.5, 0.5], [1.0, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            kl_divergence([0.5, 0.5], [0.2, 0.3, 0.5])

    @given(prob_vectors(3, 3), prob_vectors(3, 3))
    def test_nonnegative_and_zero_iff_equal(self, p, q):
        d = kl_divergence(p, q)
        assert d >= 0
        if np.max(np.abs(p - q)) >= 1e-6:
            assert d > 0
        assert kl_divergence(p, p) == 0.0


class TestGaussian:
    def test_zero_variance(self):
        assert gaussian_sample(SeededRng(1, 2), 0.0) == 0.0

    def test_negative_variance(self):
        with pytest.raises(InvalidParameterError):
            gaussian_sample(SeededRng(1), -0.1)

    def test_same_stream_same_draws(self):
        r1, r2 = SeededRng(7, 3), SeededRng(7, 3)
        assert [gaussian_sample(r1, 2.0) for _ in range(5)] == [gaussian_sample(r2, 2.0) for _ in range(5)]

    def test_streams_differ(self):
        assert gaussian_sample(SeededRng(7, 0), 1.0) != gaussian_sample(SeededRng(7, 1), 1.0)

    def test_vector_matches_scalar_sequence(self):
        r1, r2 = SeededRng(11, 5), SeededRng(11, 5)
        vec = r1.normal_vector(0.3, 6)
        seq = [gaussian_sample(r2, 0.3) for _ in range(6)]
        np.testing.assert_array_equal(vec, seq)

    def test_moments(self):
        r = SeededRng(2024, 0)
        x = np.array([gaussian_sample(r, 1.0) for _ in range(100_000)])
        assert abs(x.mean()) < 0.02
        assert abs(x.var() - 1.0) < 0.05

    def test_rejects_bad_seed(self):
        with pytest.raises(InvalidParameterError):
            SeededRng(-1)
        with pytest.raises(InvalidParameterError):
            SeededRng(0, 1 << 64)

    def test_derive_seed_is_stable(self):
        assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
        assert derive_seed(5, 1, 2) != derive_seed(5, 2, 1)


class TestCrossEntropy:
    def test_examples(self):
        assert cross_entropy_loss([1.0, 0.0], 0) == 0.0
        assert cross_entropy_loss([0.9, 0.1], 0) == pytest.approx(NEG_LN_09, abs=1e-12)
        assert cross_entropy_loss([0.5, 0.5], 1) == pytest.approx(math.log(2))

    def test_floor(self):
        assert cross_entropy_loss([1.0, 0.0], 1) == pytest.approx(-math.log(1e-12))

    @pytest.mark.parametrize("y", [-1, 2, 1.5])
    def test_bad_label(self, y):
        with pytest.raises(InvalidLabelError):
            cross_entropy_loss([0.5, 0.5], y)


@settings(max_examples=50)
@given(st.integers(0, 2**63), st.integers(0, 2**20))
def test_rng_reproducible(seed, stream):
    a = SeededRng(seed, stream).standard_normal(4)
    b = SeededRng(seed, stream).standard_normal(4)
    np.testing.assert_array_equal(a, b)
