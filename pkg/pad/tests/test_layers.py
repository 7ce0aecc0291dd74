import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from pad.autodiff import Node, Rng, backward, sum_all
from pad.exceptions import ContractError, DimensionError
from pad.layers import (
    BN_EPS,
    BatchNormLayer,
    Conv2dLayer,
    DropoutLayer,
    avg_pool2d,
    batch_norm,
    conv2d,
    conv_output_size,
    dropout,
    kaiming_uniform,
    linear,
    max_pool2d,
    softmax,
    softmax_cross_entropy,
    standardize,
)

from .utils import naive_conv2d


class ConvTest(SimpleTestCase):
    def test_output_size(self):
        self.assertEqual(conv_output_size(224, 11, 4, 2), 55)
        self.assertEqual(conv_output_size(27, 3, 1, 1), 27)

    def test_identity_kernel(self):
        x = Rng(0).normal((1, 3, 4, 4))
        w = np.eye(3).reshape(3, 3, 1, 1)
        assert_allclose(conv2d(x, w, np.zeros(3)).value, x, rtol=0, atol=1e-12)

    def test_matches_direct_loops(self):
        rng = Rng(1)
        x, w, b = rng.normal((2, 3, 9, 9)), rng.normal((4, 3, 3, 3)), rng.normal((4,))
        for stride, padding in ((1, 0), (2, 1), (4, 2)):
            assert_allclose(
                conv2d(x, w, b, stride, padding).value, naive_conv2d(x, w, b, stride, padding), rtol=1e-10, atol=1e-12,
            )

    def test_channel_mismatch(self):
        with self.assertRaises(DimensionError):
            conv2d(np.ones((1, 2, 5, 5)), np.ones((4, 3, 3, 3)), np.zeros(4))

    def test_kernel_larger_than_input(self):
        with self.assertRaises(DimensionError):
            conv2d(np.ones((1, 1, 5, 5)), np.ones((2, 1, 11, 11)), np.zeros(2))

    def test_layer_output_size(self):
        layer = Conv2dLayer(np.zeros((64, 1, 11, 11)), np.zeros(64), stride=4, padding=2)
        self.assertEqual(layer.output_size(224), 55)


class PoolTest(SimpleTestCase):
    def test_max_pool_of_constant_is_constant(self):
        out = max_pool2d(np.full((1, 2, 13, 13), 0.25), 3, 2)
        self.assertEqual(out.shape, (1, 2, 6, 6))
        assert_array_equal(out.value, np.full((1, 2, 6, 6), 0.25))

    def test_max_pool_matches_window_scan(self):
        x = Rng(2).normal((1, 2, 13, 13))
        out = max_pool2d(x, 3, 2).value
        for c in range(2):
            for i in range(6):
                for j in range(6):
                    self.assertEqual(out[0, c, i, j], x[0, c, 2 * i:2 * i + 3, 2 * j:2 * j + 3].max())

    def test_max_pool_gradient_goes_to_first_maximum(self):
        x = Node(np.zeros((1, 1, 3, 3)), requires_grad=True)
        backward(sum_all(max_pool2d(x, 3, 2)))
        expected = np.zeros((1, 1, 3, 3))
        expected[0, 0, 0, 0] = 1
        assert_array_equal(x.grad, expected)

    def test_avg_pool_of_ones(self):
        x = Node(np.ones((1, 1, 6, 6)), requires_grad=True)
        out = avg_pool2d(x, 6, 6)
        assert_array_equal(out.value, [[[[1.0]]]])
        backward(sum_all(out))
        assert_allclose(x.grad, np.full((1, 1, 6, 6), 1 / 36))

    def test_window_larger_than_input(self):
        with self.assertRaises(DimensionError):
            avg_pool2d(np.ones((1, 1, 5, 5)), 6, 6)


class BatchNormTest(SimpleTestCase):
    def standardized(self):
        raw = np.array([[1.0, 4.0, -2.0], [2.0, 0.0, 5.0], [3.0, 2.0, 1.0], [6.0, -1.0, 0.0]])
        return (raw - raw.mean(axis=0)) / raw.std(axis=0)

    def test_standardized_input_is_a_fixed_point(self):
        x = self.standardized()
        out, _, _ = batch_norm(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), training=True)
        assert_allclose(out.value, x, atol=1e-5)

    def test_eval_uses_running_statistics(self):
        out, mean, var = batch_norm(
            np.ones((1, 1)), np.array([2.0]), np.array([3.0]), np.array([0.0]), np.array([1.0]), training=False,
        )
        self.assertAlmostEqual(float(out.value[0, 0]), 2 / math.sqrt(1 + BN_EPS) + 3, places=12)
        assert_array_equal(mean, [0.0])
        assert_array_equal(var, [1.0])

    def test_running_statistics_update(self):
        x = Rng(3).normal((4, 3))
        _, mean, var = batch_norm(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), training=True)
        assert_allclose(mean, 0.1 * x.mean(axis=0))
        assert_allclose(var, 0.9 + 0.1 * x.var(axis=0, ddof=1))

    def test_single_value_per_channel_in_train_mode(self):
        with self.assertRaises(ContractError):
            batch_norm(np.ones((1, 3)), np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), training=True)

    def test_layer_keeps_running_statistics_between_calls(self):
        layer = BatchNormLayer(np.ones(2), np.zeros(2), np.zeros(2), np.ones(2))
        x = Rng(4).normal((5, 2, 3, 3))
        layer(x)
        trained_mean = layer.running_mean.copy()
        layer.set_mode('eval')
        first = layer(x).value
        assert_array_equal(layer.running_mean, trained_mean)
        assert_array_equal(layer(x).value, first)


class DropoutTest(SimpleTestCase):
    def test_eval_is_identity(self):
        x = Rng(5).normal((4, 8))
        assert_array_equal(dropout(x, 0.5, Rng(0), training=False).value, x)
        layer = DropoutLayer(0.5, Rng(0))
        layer.set_mode('eval')
        assert_array_equal(layer(x).value, x)

    def test_rate_zero_is_identity_in_train_mode(self):
        x = Rng(6).normal((4, 8))
        assert_array_equal(dropout(x, 0.0, Rng(0), training=True).value, x)

    def test_kept_fraction_and_scaling(self):
        out = dropout(np.ones((1000, 100)), 0.5, Rng(7), training=True).value
        kept = out != 0
        self.assertAlmostEqual(kept.mean(), 0.5, delta=0.01)
        assert_array_equal(np.unique(out), [0.0, 2.0])

    def test_invalid_rates(self):
        for rate in (1.0, -0.1):
            with self.assertRaises(ContractError):
                dropout(np.ones(3), rate, Rng(0))


class LinearTest(SimpleTestCase):
    def test_identity(self):
        x = Rng(8).normal((2, 4))
        assert_allclose(linear(x, np.eye(4), np.zeros(4)).value, x)

    def test_output_width(self):
        out = linear(np.ones((2, 256)), np.zeros((2048, 256)), np.ones(2048))
        self.assertEqual(out.shape, (2, 2048))

    def test_width_mismatch(self):
        with self.assertRaises(DimensionError):
            linear(np.ones((2, 255)), np.zeros((2048, 256)), np.zeros(2048))


class SoftmaxTest(SimpleTestCase):
    def test_equal_logits_give_log_two(self):
        loss = softmax_cross_entropy(np.zeros((1, 2)), [1])
        self.assertAlmostEqual(float(loss.value), 0.693147, places=6)

    def test_shift_invariance(self):
        logits = Rng(9).normal((5, 2))
        labels = [0, 1, 1, 0, 1]
        self.assertAlmostEqual(
            float(softmax_cross_entropy(logits, labels).value),
            float(softmax_cross_entropy(logits + 50.0, labels).value),
            places=12,
        )
        assert_allclose(softmax(logits).sum(axis=1), np.ones(5))

    def test_large_logits_stay_finite(self):
        loss = softmax_cross_entropy(np.array([[1000.0, -1000.0]]), [1])
        self.assertAlmostEqual(float(loss.value), 2000.0)

    def test_label_out_of_range(self):
        with self.assertRaises(ContractError):
            softmax_cross_entropy(np.zeros((2, 2)), [0, 2])


class KaimingTest(SimpleTestCase):
    def test_bounds_and_moments(self):
        bound = math.sqrt(6 / 256)
        draws = kaiming_uniform(Rng(10), (2048, 256), 256, 'f64')
        self.assertLessEqual(np.abs(draws).max(), bound)
        sigma = bound / math.sqrt(3)
        self.assertLess(abs(draws.mean()), 4 * sigma / math.sqrt(draws.size))
        self.assertAlmostEqual(draws.var() / sigma ** 2, 1.0, delta=0.02)

    def test_output_layers_use_the_linear_bound(self):
        draws = kaiming_uniform(Rng(11), (64, 6), 6, 'f64', nonlinearity='linear')
        self.assertLessEqual(np.abs(draws).max(), math.sqrt(3 / 6))
        self.assertGreater(np.abs(draws).max(), math.sqrt(3 / 6) * 0.9)

    def test_unknown_nonlinearity(self):
        with self.assertRaises(ContractError):
            kaiming_uniform(Rng(0), (2, 2), 2, nonlinearity='tanh')


class StandardizeTest(SimpleTestCase):
    def test_each_sample_gets_zero_mean_and_unit_variance(self):
        x = Rng(5).uniform(0.2, 0.9, (3, 1, 8, 8), 'f64') * np.array([1.0, 5.0, 0.1])[:, None, None, None]
        out = standardize(x).value
        assert_allclose(out.mean(axis=(1, 2, 3)), np.zeros(3), atol=1e-12)
        self.assertAlmostEqual(float(out[1].var()), 1.0, places=4)

    def test_affine_change_of_a_sample_is_removed(self):
        x = Rng(6).normal((2, 1, 5, 5))
        assert_allclose(standardize(x * 3.0 + 0.7).value, standardize(x).value, atol=1e-4)

    def test_gradient_is_orthogonal_to_shift_and_scale(self):
        x = Node(Rng(7).normal((2, 3, 4, 4)), requires_grad=True)
        out = standardize(x)
        backward(sum_all(out))
        assert_allclose(x.grad, np.zeros(x.shape), atol=1e-12)

    def test_needs_a_batch_axis(self):
        with self.assertRaises(DimensionError):
            standardize(np.ones(4))
