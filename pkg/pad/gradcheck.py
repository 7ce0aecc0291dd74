"""
Central-difference verification of recorded adjoints.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, Rng, backward, no_grad
from .exceptions import ContractError

logger = logging.getLogger(__name__)

RELATIVE_ERROR_FLOOR = 1e-12


def relative_error(analytic, numeric, floor=RELATIVE_ERROR_FLOOR):
    """
    |a - n| / max(|a|, |n|, floor). A floor above zero turns the measure into an
    absolute error for adjoints smaller than ``floor``.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


@dataclass
class InputCheck:
    name: str
    max_relative_error: float
    worst_index: tuple
    checked: int
    skipped: int = 0


@dataclass
class GradcheckReport:
    tol: float
    inputs: list = field(default_factory=list)

    @property
    def max_relative_error(self):
        return max((check.max_relative_error for check in self.inputs), default=0.0)

    @property
    def passed(self):
        return self.max_relative_error < self.tol


def _scalar(output):
    if not isinstance(output, Node) or output.value.size != 1:
        shape = getattr(output, 'shape', None)
        raise ContractError(f"gradcheck needs a function returning a scalar Node, got shape {shape}")
    return float(output.value.reshape(()))


def _coordinates(adjoint, max_checks, rng):
    """
    Every coordinate, or ``max_checks`` of them: the largest adjoints first and
    the remainder drawn uniformly from the rest, zero adjoints included.
    """
    if max_checks is None or max_checks >= adjoint.size:
        return list(np.ndindex(*adjoint.shape))
    ranked = np.argsort(-np.abs(adjoint).ravel(), kind='stable')
    top = ranked[:math.ceil(max_checks / 2)]
    rest = np.sort(ranked[len(top):])
    drawn = rest[rng.permutation(len(rest))[:max_checks - len(top)]]
    return [np.unravel_index(index, adjoint.shape) for index in np.concatenate([top, drawn])]


def _evaluate_at(fn, leaves, leaf, original, index, delta):
    perturbed = original.copy()
    perturbed[index] += delta
    leaf.value = perturbed
    with no_grad():
        return _scalar(fn(*leaves))


def gradcheck(fn, inputs, eps=1e-6, tol=1e-5, max_checks=None, names=None, floor=RELATIVE_ERROR_FLOOR, seed=0):
    """
    Compare adjoints from ``backward`` with central differences.

    A coordinate whose two one-sided slopes disagree by at least the central
    error sits within ``eps`` of a kink (ReLU, max-pool switch); if it would
    fail it is counted as skipped instead.

    Args:
        fn: callable mapping Nodes to a scalar Node
        inputs: arrays or tracked Nodes (f64); Nodes are perturbed in place of
            their value and restored afterwards
        eps: finite-difference step
        tol: pass threshold on the max relative error
        max_checks: check at most this many coordinates per input, half by
            largest adjoint and half at random; None checks every coordinate
        names: optional labels for the report
        floor: adjoint magnitude below which errors are measured absolutely
        seed: seed for the random coordinates

    Returns:
        GradcheckReport with the max relative error per input
    """
    leaves = []
    for item in inputs:
        if isinstance(item, Node):
            if not item.requires_grad:
                raise ContractError(f"gradcheck input {item!r} does not require grad")
            leaves.append(item)
        else:
            leaves.append(Node(np.array(item, copy=True), requires_grad=True))
    for leaf in leaves:
        if leaf.dtype != np.float64:
            raise ContractError(f"gradcheck needs f64 inputs, got {leaf.dtype}")

    output = fn(*leaves)
    centre = _scalar(output)
    backward(output)
    adjoints = [leaf.grad.copy() for leaf in leaves]

    names = list(names) if names is not None else [leaf.name or f"input{i}" for i, leaf in enumerate(leaves)]
    coordinates = Rng(seed).split('gradcheck', 'coordinates')
    report = GradcheckReport(tol=tol)
    for position, (name, leaf, adjoint) in enumerate(zip(names, leaves, adjoints)):
        original = leaf.value
        worst, worst_index, skipped = 0.0, (), 0
        indices = _coordinates(adjoint, max_checks, coordinates.split(position))
        try:
            for index in indices:
                upper = _evaluate_at(fn, leaves, leaf, original, index, eps)
                lower = _evaluate_at(fn, leaves, leaf, original, index, -eps)
                numeric = (upper - lower) / (2 * eps)
                error = float(relative_error(adjoint[index], numeric, floor))
                if error >= tol:
                    one_sided = abs((upper - centre) - (centre - lower)) / eps
                    if one_sided >= abs(adjoint[index] - numeric):
                        skipped += 1
                        continue
                if error > worst:
                    worst, worst_index = error, tuple(int(i) for i in index)
        finally:
            leaf.value = original
        report.inputs.append(InputCheck(name, worst, worst_index, len(indices), skipped))
    logger.debug(f"gradcheck max relative error {report.max_relative_error:.3e} over {len(leaves)} inputs")
    return report
