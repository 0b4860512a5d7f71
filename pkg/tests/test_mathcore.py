import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.exceptions import NumericDomainError
from app.ml.mathcore import Rng, finite_diff_grad, relative_error, sigmoid, tanh_vec


class TestSigmoid:
    def test_zero_is_half(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5

    def test_extremes_do_not_overflow(self):
        out = sigmoid(np.array([-1000.0, 1000.0]))
        assert out[0] == 0.0 or out[0] < 1e-300
        assert out[1] == 1.0

    def test_matches_textbook_form(self):
        x = np.linspace(-20, 20, 41)
        assert_allclose(sigmoid(x), 1.0 / (1.0 + np.exp(-x)), rtol=1e-12)

    def test_symmetry(self):
        x = np.linspace(-5, 5, 11)
        assert_allclose(sigmoid(-x), 1.0 - sigmoid(x), atol=1e-15)

    def test_rejects_nan(self):
        with pytest.raises(NumericDomainError):
            sigmoid(np.array([np.nan]))

    def test_reference_values(self):
        assert sigmoid(np.array([-1.5]))[0] == pytest.approx(0.18242552, abs=1e-8)
        assert tanh_vec(np.array([0.5]))[0] == pytest.approx(0.46211715, abs=1e-8)

    def test_tanh_rejects_inf(self):
        with pytest.raises(NumericDomainError):
            tanh_vec(np.array([np.inf]))


class TestFiniteDifferences:
    def test_quadratic(self):
        theta = np.array([1.0, -2.0, 0.5])
        grad = finite_diff_grad(lambda t: float(np.sum(t ** 2)), theta)
        assert_allclose(grad, 2 * theta, rtol=1e-8)

    def test_coordinate_subset(self):
        theta = np.array([1.0, 2.0, 3.0])
        grad = finite_diff_grad(lambda t: float(t @ t), theta, coords=[2])
        assert grad.shape == (1,)
        assert_allclose(grad, [6.0], rtol=1e-8)

    def test_theta_is_not_modified(self):
        theta = np.array([1.0, 2.0])
        finite_diff_grad(lambda t: float(t.sum()), theta)
        assert_array_equal(theta, [1.0, 2.0])

    def test_rejects_non_positive_step(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda t: 0.0, np.zeros(2), h=0.0)

    def test_non_finite_function(self):
        with pytest.raises(NumericDomainError):
            finite_diff_grad(lambda t: math.inf, np.zeros(1))


class TestRelativeError:
    def test_identical_is_zero(self):
        assert relative_error(np.array([3.0]), np.array([3.0]))[0] == 0.0

    def test_floor_for_tiny_values(self):
        assert relative_error(np.array([0.0]), np.array([1e-12]))[0] == pytest.approx(1e-4)

    def test_scaled(self):
        assert relative_error(np.array([1.0]), np.array([1.1]))[0] == pytest.approx(0.1 / 1.1)


class TestRng:
    def test_same_seed_same_stream(self):
        assert_array_equal(Rng(7).uniform(0, 1, 5), Rng(7).uniform(0, 1, 5))

    def test_derived_streams_depend_on_keys_only(self):
        a = Rng(7)
        a.uniform(0, 1, 3)
        assert_array_equal(a.derive(1, 2).permutation(10), Rng(7).derive(1, 2).permutation(10))
        assert not np.array_equal(Rng(7).derive(1).uniform(0, 1, 4), Rng(7).derive(2).uniform(0, 1, 4))

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            Rng(-1)

