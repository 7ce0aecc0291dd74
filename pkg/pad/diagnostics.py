"""
Gradient check suite over every differentiable building block and the small
MVANet, in f64 against central differences.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Node, Rng, add, concat, matmul, mul, relu, sum_all
from .exceptions import ContractError
from .gradcheck import gradcheck
from .layers import (
    apply_mask,
    avg_pool2d,
    batch_norm,
    conv2d,
    linear,
    max_pool2d,
    softmax_cross_entropy,
    standardize,
)
from .network import build, loss, small_spec

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
MODEL_INPUT_SIZE = 32
MODEL_CHECKS_PER_TENSOR = 4
MODEL_EPS = 1e-6
LAYER_EPS = 1e-5
GRADIENT_FLOOR = 1e-3


def weighted_sum(node, rng):
    """Scalar reduction with random weights; the same ``rng`` gives the same weights on every call."""
    weights = Node(rng.split('weights').uniform(0.5, 1.5, node.shape, 'f64'))
    return sum_all(mul(node, weights))


def away_from_zero(rng, shape, margin=0.1):
    values = rng.normal(shape)
    return np.sign(values) * (margin + np.abs(values))


def distinct_values(rng, shape, gap=0.1):
    """Values pairwise at least ``gap`` apart, so max-pool winners are unique."""
    return rng.permutation(int(np.prod(shape))).reshape(shape).astype(np.float64) * gap


def _matmul(rng):
    reducer = rng.split('reducer')
    return (lambda a, b: weighted_sum(matmul(a, b), reducer)), [rng.normal((4, 3)), rng.normal((3, 5))]


def _add_mul(rng):
    reducer = rng.split('reducer')
    return (lambda a, b: weighted_sum(mul(add(a, b), b), reducer)), [rng.normal((3, 4)), rng.normal((1, 4))]


def _concat(rng):
    reducer = rng.split('reducer')
    return (lambda *parts: weighted_sum(concat(parts, axis=1), reducer)), [rng.normal((2, 2)) for _ in range(3)]


def _relu(rng):
    reducer = rng.split('reducer')
    return (lambda x: weighted_sum(relu(x), reducer)), [away_from_zero(rng, (4, 5))]


def _conv11(rng):
    reducer = rng.split('reducer')
    return (
        (lambda x, w, b: weighted_sum(conv2d(x, w, b, stride=4, padding=2), reducer)),
        [rng.normal((1, 1, 23, 23)), rng.normal((2, 1, 11, 11), 0.1), rng.normal((2,))],
    )


def _conv3(rng):
    reducer = rng.split('reducer')
    return (
        (lambda x, w, b: weighted_sum(conv2d(x, w, b, stride=1, padding=1), reducer)),
        [rng.normal((2, 3, 7, 7)), rng.normal((4, 3, 3, 3), 0.3), rng.normal((4,))],
    )


def _maxpool(rng):
    reducer = rng.split('reducer')
    return (lambda x: weighted_sum(max_pool2d(x, 3, 2), reducer)), [distinct_values(rng, (1, 2, 9, 9))]


def _avgpool(rng):
    reducer = rng.split('reducer')
    return (lambda x: weighted_sum(avg_pool2d(x, 3, 3), reducer)), [rng.normal((2, 2, 6, 6))]


def _batch_norm(shape):
    def case(rng):
        reducer = rng.split('reducer')
        channels = shape[1]
        stats = (np.zeros(channels), np.ones(channels))

        def fn(x, gamma, beta):
            out, _, _ = batch_norm(x, gamma, beta, *stats, training=True)
            return weighted_sum(out, reducer)

        return fn, [rng.normal(shape), 1 + rng.normal((channels,), 0.1), rng.normal((channels,))]
    return case


def _standardize(rng):
    reducer = rng.split('reducer')
    return (lambda x: weighted_sum(standardize(x), reducer)), [rng.uniform(0, 1, (2, 1, 5, 5), 'f64')]


def _linear(rng):
    reducer = rng.split('reducer')
    return (lambda x, w, b: weighted_sum(linear(x, w, b), reducer)), [
        rng.normal((3, 5)), rng.normal((4, 5)), rng.normal((4,)),
    ]


def _dropout_mask(rng):
    reducer = rng.split('reducer')
    mask = rng.bernoulli((4, 6), 0.5)
    return (lambda x: weighted_sum(apply_mask(x, mask, 2.0), reducer)), [rng.normal((4, 6))]


def _cross_entropy(rng):
    labels = rng.split('labels').generator.integers(0, 2, size=8)
    return (lambda logits: softmax_cross_entropy(logits, labels)), [rng.normal((8, 2))]


LAYER_CASES = {
    'matmul': _matmul,
    'add/mul': _add_mul,
    'concat': _concat,
    'relu': _relu,
    'conv11x11/s4': _conv11,
    'conv3x3': _conv3,
    'maxpool': _maxpool,
    'avgpool': _avgpool,
    'batchnorm-2d': _batch_norm((4, 3)),
    'batchnorm-4d': _batch_norm((2, 3, 4, 4)),
    'standardize': _standardize,
    'linear': _linear,
    'dropout-mask': _dropout_mask,
    'softmax-ce': _cross_entropy,
}


@dataclass
class CaseResult:
    name: str
    instances: int
    max_relative_error: float
    tol: float

    @property
    def passed(self):
        return self.max_relative_error < self.tol


def check_model(rng, input_size=MODEL_INPUT_SIZE, batch=2, max_checks=MODEL_CHECKS_PER_TENSOR):
    """Gradcheck a small-spec MVANet in train mode, dropout masks frozen across evaluations."""
    model = build(small_spec(input_size), rng.split('model'), dtype='f64')
    x = rng.split('input').normal((batch, 1, input_size, input_size))
    labels = np.arange(batch) % 2
    masks = rng.split('masks')
    parameters = model.named_parameters()

    def fn(*_):
        model.reseed(masks)
        value, _ = loss(model, x, labels, mode='train')
        return value

    return gradcheck(fn, list(parameters.values()), eps=MODEL_EPS, max_checks=max_checks, floor=GRADIENT_FLOOR,
                     names=list(parameters))


def run_gradcheck_suite(instances=20, seed=0, tol=DEFAULT_TOLERANCE, cases=None, include_model=True):
    """
    Run every case ``instances`` times with seeded inputs.

    Returns:
        list of CaseResult, one per case
    """
    root = Rng(seed).split('gradcheck')
    unknown = set(cases or ()) - set(LAYER_CASES)
    if unknown:
        raise ContractError(f"Unknown gradcheck case(s): {', '.join(sorted(unknown))}")
    selected = {name: LAYER_CASES[name] for name in (cases or LAYER_CASES)}
    results = []
    for name, make in selected.items():
        worst = 0.0
        for instance in range(instances):
            fn, inputs = make(root.split(name, instance))
            report = gradcheck(fn, inputs, eps=LAYER_EPS, tol=tol, floor=GRADIENT_FLOOR)
            worst = max(worst, report.max_relative_error)
        results.append(CaseResult(name, instances, worst, tol))
        logger.debug(f"gradcheck {name}: max relative error {worst:.3e}")
    if include_model:
        worst = 0.0
        for instance in range(instances):
            worst = max(worst, check_model(root.split('mvanet', instance)).max_relative_error)
        results.append(CaseResult('mvanet-small', instances, worst, tol))
        logger.debug(f"gradcheck mvanet-small: max relative error {worst:.3e}")
    return results
