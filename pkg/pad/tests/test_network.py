import dataclasses
import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from pad.autodiff import Node, Rng, backward, mul, no_grad, sum_all
from pad.exceptions import ContractError, DimensionError, SpecError
from pad.labels import ATTACK, BONAFIDE
from pad.layers import softmax, softmax_cross_entropy
from pad.network import (
    DEFAULT_PARAMETER_COUNT,
    NetworkSpec,
    build,
    count_parameters,
    decide,
    default_spec,
    init_parameters,
    loss,
    parameter_shapes,
    predict,
    seeded_model,
    small_spec,
)


class NetworkSpecTest(SimpleTestCase):
    def test_default_shape_chain(self):
        self.assertEqual(default_spec().shape_chain(), [224, 55, 27, 27, 13, 13, 13, 13, 6, 1])

    def test_small_shape_chains(self):
        self.assertEqual(small_spec(64).shape_chain(), [64, 32, 15, 15, 7, 7, 7, 7, 1])
        self.assertEqual(small_spec(32).shape_chain(), [32, 16, 7, 7, 3, 3, 3, 3, 1])

    def test_default_parameter_count(self):
        self.assertEqual(count_parameters(default_spec()), DEFAULT_PARAMETER_COUNT)
        self.assertEqual(DEFAULT_PARAMETER_COUNT, 5_774_420)

    def test_input_that_does_not_reach_a_channel_vector(self):
        with self.assertRaises(SpecError):
            dataclasses.replace(default_spec(), input_size=63).validate()

    def test_fusion_width_must_match_branches(self):
        with self.assertRaises(SpecError):
            dataclasses.replace(default_spec(), fusion_width=4).validate()

    def test_branch_must_end_in_two_classes(self):
        with self.assertRaises(SpecError):
            default_spec().with_branches(((64, 32, 3),)).validate()

    def test_dict_round_trip(self):
        spec = small_spec(32)
        self.assertEqual(NetworkSpec.from_dict(spec.to_dict()), spec)

    def test_unknown_field(self):
        with self.assertRaises(SpecError):
            NetworkSpec.from_dict({'colour': 'blue'})

    def test_input_norm_must_be_known(self):
        with self.assertRaises(SpecError):
            dataclasses.replace(small_spec(32), input_norm='per-batch').validate()
        self.assertEqual(default_spec().input_norm, 'per-image')


class InitializationTest(SimpleTestCase):
    def test_conv1_weight_shape(self):
        shapes = dict(parameter_shapes(default_spec()))
        self.assertEqual(shapes['conv1.weight'], (64, 1, 11, 11))
        self.assertEqual(shapes['head.weight'], (2, 6))

    def test_same_seed_gives_identical_parameters(self):
        spec = small_spec(32)
        first = init_parameters(spec, Rng(5))
        second = init_parameters(spec, Rng(5))
        for name in first:
            self.assertEqual(first[name].tobytes(), second[name].tobytes(), name)

    def test_other_seed_differs(self):
        spec = small_spec(32)
        first, second = init_parameters(spec, Rng(5)), init_parameters(spec, Rng(6))
        self.assertFalse(np.array_equal(first['conv1.weight'], second['conv1.weight']))

    def test_batch_norm_starts_as_identity(self):
        params = init_parameters(small_spec(32), Rng(0))
        assert_array_equal(params['bn1.gamma'], np.ones(16))
        assert_array_equal(params['bn1.running_var'], np.ones(16))
        assert_array_equal(params['bn1.beta'], np.zeros(16))

    def test_output_layers_use_the_linear_bound(self):
        spec = small_spec(32)
        params = init_parameters(spec, Rng(0), 'f64')
        self.assertLessEqual(np.abs(params['head.weight']).max(), math.sqrt(3 / spec.fusion_width))
        self.assertLessEqual(np.abs(params['branch3.fc3.weight']).max(), math.sqrt(3 / 16))
        self.assertGreater(np.abs(params['branch1.fc1.weight']).max(), math.sqrt(3 / 32))


class ForwardTest(SimpleTestCase):
    def test_default_network_shapes(self):
        model = seeded_model(default_spec(), 0)
        x = Rng(1).uniform(0, 1, (2, 1, 224, 224))
        with no_grad():
            result = model.forward(x, 'eval')
        self.assertEqual(result.logits.shape, (2, 2))
        self.assertEqual(result.fused.shape, (2, 6))
        self.assertEqual(result.base_features.shape, (2, 256))
        self.assertEqual([shape[-1] for _, shape in result.trace], [224, 55, 27, 27, 13, 13, 13, 13, 6, 1])
        self.assertEqual([len(logits.value[0]) for logits in result.branch_logits], [2, 2, 2])

    def test_per_image_standardization_removes_contrast_and_offset(self):
        model = seeded_model(small_spec(32), 6, dtype='f64')
        x = Rng(7).uniform(0, 1, (2, 1, 32, 32), 'f64')
        with no_grad():
            plain = model.forward(x, 'eval').logits.value
            shifted = model.forward(0.5 * x + 0.2, 'eval').logits.value
        assert_allclose(shifted, plain, rtol=1e-3, atol=1e-5)

    def test_unnormalized_input_reaches_the_first_convolution(self):
        spec = dataclasses.replace(small_spec(32), input_norm='none')
        model = seeded_model(spec, 6, dtype='f64')
        x = Rng(7).uniform(0, 1, (2, 1, 32, 32), 'f64')
        with no_grad():
            plain = model.forward(x, 'eval').logits.value
            shifted = model.forward(0.5 * x + 0.2, 'eval').logits.value
        self.assertFalse(np.allclose(shifted, plain, rtol=1e-3, atol=1e-5))

    def test_wrong_input_shape(self):
        model = seeded_model(small_spec(32), 0)
        with self.assertRaises(DimensionError):
            model.forward(np.zeros((1, 1, 31, 31)), 'eval')

    def test_eval_forward_is_deterministic(self):
        model = seeded_model(small_spec(32), 2)
        x = Rng(3).uniform(0, 1, (3, 1, 32, 32))
        with no_grad():
            first = model.forward(x, 'eval').logits.value
            second = model.forward(x, 'eval').logits.value
        self.assertEqual(first.tobytes(), second.tobytes())

    def test_train_forward_draws_new_dropout_masks(self):
        model = seeded_model(small_spec(32), 2)
        x = Rng(3).uniform(0, 1, (3, 1, 32, 32))
        first = model.forward(x, 'train').branch_logits[0].value
        second = model.forward(x, 'train').branch_logits[0].value
        self.assertFalse(np.array_equal(first, second))

    def test_zero_head_gives_even_odds(self):
        model = seeded_model(small_spec(32), 4)
        model.head.weight.value[...] = 0
        model.head.bias.value[...] = 0
        x = np.zeros((1, 1, 32, 32))
        with no_grad():
            logits = model.forward(x, 'eval').logits.value
        assert_array_equal(logits, np.zeros((1, 2)))
        assert_allclose(softmax(logits), [[0.5, 0.5]])
        value, _ = loss(model, x, [ATTACK], mode='eval')
        self.assertAlmostEqual(float(value.value), math.log(2), places=6)

    def test_empty_batch(self):
        model = seeded_model(small_spec(32), 0)
        with self.assertRaises(ContractError):
            loss(model, np.zeros((0, 1, 32, 32)), [])


class BranchTest(SimpleTestCase):
    def symmetric_model(self, dropout_rate=0.5):
        spec = dataclasses.replace(small_spec(32).with_branches(((32, 16, 2),) * 3), dropout_rate=dropout_rate)
        model = build(spec, Rng(8), dtype='f64')
        state = model.state()
        for branch in (2, 3):
            for layer in (1, 2, 3):
                for kind in ('weight', 'bias'):
                    state[f'branch{branch}.fc{layer}.{kind}'] = state[f'branch1.fc{layer}.{kind}']
        model.load_state(state)
        return model

    def test_identical_branches_agree_without_dropout(self):
        x = Rng(9).uniform(0, 1, (2, 1, 32, 32))
        for model, mode in ((self.symmetric_model(), 'eval'), (self.symmetric_model(0.0), 'train')):
            first, second, third = (node.value for node in model.forward(x, mode).branch_logits)
            assert_array_equal(first, second)
            assert_array_equal(first, third)

    def test_per_branch_dropout_streams_break_symmetry(self):
        model = self.symmetric_model()
        x = Rng(9).uniform(0, 1, (2, 1, 32, 32))
        first, second, _ = (node.value for node in model.forward(x, 'train').branch_logits)
        self.assertFalse(np.array_equal(first, second))

    def test_fused_width_follows_branch_count(self):
        spec = small_spec(32).with_branches(((32, 16, 2), (16, 8, 2)))
        model = build(spec, Rng(0))
        with no_grad():
            result = model.forward(np.zeros((1, 1, 32, 32)), 'eval')
        self.assertEqual(result.fused.shape, (1, 4))

    def test_base_gradient_is_sum_of_branch_contributions(self):
        model = build(small_spec(32), Rng(10), dtype='f64')
        x = Rng(11).uniform(0, 1, (2, 1, 32, 32), 'f64')
        model.reseed(Rng(12))
        result = model.forward(x, 'train')
        backward(softmax_cross_entropy(result.logits, [BONAFIDE, ATTACK]))
        total = result.base_features.grad.copy()
        fused_grad = result.fused.grad.copy()

        summed = np.zeros_like(total)
        for index, logits in enumerate(result.branch_logits):
            segment = Node(fused_grad[:, 2 * index:2 * index + 2])
            backward(sum_all(mul(logits, segment)))
            summed += result.base_features.grad
        assert_allclose(summed, total, rtol=1e-9, atol=1e-14)


class DecisionTest(SimpleTestCase):
    def test_argmax_and_tie_rule(self):
        predictions = decide(np.array([[2.0, -1.0], [0.0, 0.0], [-3.0, 1.0]]))
        assert_array_equal(predictions.classes, [BONAFIDE, ATTACK, ATTACK])
        self.assertEqual(predictions.labels, ['bonafide', 'attack', 'attack'])
        self.assertAlmostEqual(float(predictions.scores[1]), 0.5)

    def test_positive_scaling_keeps_decisions(self):
        logits = Rng(13).normal((16, 2))
        assert_array_equal(decide(logits).classes, decide(logits * 7.5).classes)

    def test_predict_runs_in_eval_mode(self):
        model = seeded_model(small_spec(32), 14)
        x = Rng(15).uniform(0, 1, (4, 1, 32, 32))
        first, second = predict(model, x), predict(model, x)
        assert_array_equal(first.classes, second.classes)
        self.assertEqual(model.mode, 'eval')
