"""
Dense tensors and define-by-run reverse-mode differentiation.

Tensor storage is a numpy ndarray in row-major order with dtype f32 or f64.
Every differentiable operation returns a Node that remembers its parents and
a closure producing the parents' adjoints; ``backward`` walks the recorded
graph in reverse topological order and sums the contributions arriving at
each node. Inputs are never written to: operations always allocate.
"""

import copy
import logging
import threading
import zlib
from contextlib import contextmanager

import numpy as np

from .exceptions import ContractError, DimensionError

logger = logging.getLogger(__name__)

DTYPES = {
    'f32': np.float32,
    'f64': np.float64,
}

_local = threading.local()


def resolve_dtype(dtype):
    if isinstance(dtype, str):
        try:
            return np.dtype(DTYPES[dtype])
        except KeyError:
            raise ContractError(f"Unsupported dtype '{dtype}', expected one of {sorted(DTYPES)}")
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"Unsupported dtype '{dtype}'")
    return dtype


def dtype_name(dtype):
    return 'f64' if np.dtype(dtype) == np.float64 else 'f32'


def tensor(data, dtype='f32'):
    """Copy ``data`` into a fresh array of the requested dtype."""
    return np.array(data, dtype=resolve_dtype(dtype))


def grad_enabled():
    return getattr(_local, 'grad_enabled', True)


@contextmanager
def no_grad():
    """Run operations without recording the graph (evaluation passes)."""
    previous = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Node:
    """A value in the computation graph plus its accumulated adjoint."""

    __slots__ = ('value', '_grad', 'op', 'parents', 'requires_grad', '_backward', 'name')

    def __init__(self, value, requires_grad=False, op='leaf', parents=(), backward=None, name=None):
        self.value = np.asarray(value)
        self._grad = None
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self._backward = backward
        self.name = name

    @property
    def grad(self):
        # allocated on first use; shape always follows the current value
        if self._grad is None or self._grad.shape != self.value.shape:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self._grad = None

    def backward(self):
        return backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ''
        return f"Node{label}(op={self.op}, shape={self.shape}, dtype={dtype_name(self.dtype)})"


def as_node(value):
    if isinstance(value, Node):
        return value
    return Node(value)


def record(value, op, parents, backward_fn):
    """Wrap an op result, attaching the adjoint closure when any parent is tracked."""
    parents = tuple(parents)
    if grad_enabled() and any(parent.requires_grad for parent in parents):
        return Node(value, requires_grad=True, op=op, parents=parents, backward=backward_fn)
    return Node(value, op=op)


def _topological_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """
    Propagate d(loss)/d(node) to every tracked node reachable from ``loss``.

    Gradients of the traversed nodes are reset first, so each call reports the
    gradient of this loss alone. A node consumed by several operations receives
    the sum of all consumer contributions.

    Returns:
        dict: tracked Node -> gradient array
    """
    if loss.value.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    order = _topological_order(loss)
    for node in order:
        node.zero_grad()
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is None:
            continue
        contributions = node._backward(node.grad)
        for parent, contribution in zip(node.parents, contributions):
            if contribution is None or not parent.requires_grad:
                continue
            parent.grad += contribution
    return {node: node.grad for node in order if node.requires_grad}


# Elementwise and structural operations

def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


def add(a, b):
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, 'add')

    def backward_fn(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return record(a.value + b.value, 'add', (a, b), backward_fn)


def mul(a, b):
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, 'mul')

    def backward_fn(grad):
        return _unbroadcast(grad * b.value, a.shape), _unbroadcast(grad * a.value, b.shape)

    return record(a.value * b.value, 'mul', (a, b), backward_fn)


def matmul(a, b):
    a, b = as_node(a), as_node(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward_fn(grad):
        return grad @ b.value.T, a.value.T @ grad

    return record(a.value @ b.value, 'matmul', (a, b), backward_fn)


def relu(x):
    x = as_node(x)
    mask = x.value > 0

    def backward_fn(grad):
        return (grad * mask,)

    return record(np.maximum(x.value, 0), 'relu', (x,), backward_fn)


def concat(nodes, axis=1):
    nodes = [as_node(node) for node in nodes]
    if not nodes:
        raise DimensionError("concat: nothing to concatenate")
    first = nodes[0]
    for node in nodes[1:]:
        if node.ndim != first.ndim:
            raise DimensionError(f"concat: ranks differ ({first.shape} vs {node.shape})")
        for dim in range(first.ndim):
            if dim != axis % first.ndim and node.shape[dim] != first.shape[dim]:
                raise DimensionError(
                    f"concat: non-axis dimension {dim} differs ({first.shape} vs {node.shape})"
                )
    boundaries = np.cumsum([node.shape[axis] for node in nodes])[:-1]

    def backward_fn(grad):
        return tuple(np.split(grad, boundaries, axis=axis))

    return record(np.concatenate([node.value for node in nodes], axis=axis), 'concat', nodes, backward_fn)


def reshape(x, shape):
    x = as_node(x)
    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")

    def backward_fn(grad):
        return (grad.reshape(x.shape),)

    return record(value, 'reshape', (x,), backward_fn)


def transpose(x):
    x = as_node(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")

    def backward_fn(grad):
        return (grad.T,)

    return record(x.value.T, 'transpose', (x,), backward_fn)


def sum_all(x):
    x = as_node(x)

    def backward_fn(grad):
        return (np.ones_like(x.value) * grad,)

    return record(np.asarray(x.value.sum(), dtype=x.dtype), 'sum', (x,), backward_fn)


# Random streams

def _key_part(key):
    if isinstance(key, str):
        return zlib.crc32(key.encode('utf-8'))
    key = int(key)
    if key < 0:
        raise ContractError(f"Rng keys must be non-negative, got {key}")
    return key


class Rng:
    """
    Splittable, seeded random stream.

    Draws come from numpy's PCG64 generator seeded through SeedSequence with
    ``spawn_key`` set to the derivation path, so ``Rng(s).split('a', 3)`` is the
    same stream on every platform and independent of sibling streams.
    """

    def __init__(self, seed, key=()):
        seed = int(seed)
        if not 0 <= seed < 2 ** 64:
            raise ContractError(f"Rng seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.key = tuple(_key_part(part) for part in key)
        sequence = np.random.SeedSequence(seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def split(self, *keys):
        return Rng(self.seed, self.key + tuple(_key_part(key) for key in keys))

    def uniform(self, low, high, shape, dtype='f32'):
        return self.generator.uniform(low, high, size=shape).astype(resolve_dtype(dtype))

    def normal(self, shape, scale=1.0, dtype='f64'):
        return (self.generator.standard_normal(size=shape) * scale).astype(resolve_dtype(dtype))

    def random(self, shape=None):
        return self.generator.random(size=shape)

    def permutation(self, n):
        return self.generator.permutation(n)

    def bernoulli(self, shape, keep):
        return self.generator.random(size=shape) < keep

    def get_state(self):
        return copy.deepcopy(self.generator.bit_generator.state)

    def set_state(self, state):
        self.generator.bit_generator.state = copy.deepcopy(state)

    def __repr__(self):
        return f"Rng(seed={self.seed}, key={self.key})"
