"""
Layers used by MVANet.

Each layer comes as a differentiable function over Nodes plus a small class
that owns its parameters and train/eval mode. Convolution follows the
cross-correlation convention (kernels are not flipped). Windows are taken
with ``sliding_window_view`` and contracted with ``tensordot``.
"""

import logging
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Node, add, as_node, matmul, mul, record, transpose
from .exceptions import ContractError, DimensionError

logger = logging.getLogger(__name__)

MODES = ('train', 'eval')

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def conv_output_size(size, kernel, stride=1, padding=0):
    """floor((size + 2*padding - kernel) / stride) + 1, rejecting empty outputs."""
    span = size + 2 * padding - kernel
    if span < 0:
        raise DimensionError(
            f"window of {kernel} does not fit input of {size} with padding {padding}"
        )
    return span // stride + 1


def _window_slices(offset, count, stride):
    return slice(offset, offset + stride * (count - 1) + 1, stride)


def conv2d(x, weight, bias, stride=1, padding=0):
    x, weight, bias = as_node(x), as_node(weight), as_node(bias)
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects [B, C, H, W] input, got {x.shape}")
    batch, channels, height, width = x.shape
    out_channels, in_channels, kernel_h, kernel_w = weight.shape
    if channels != in_channels:
        raise DimensionError(f"conv2d: input has {channels} channels, weight expects {in_channels}")
    if bias.shape != (out_channels,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {out_channels} filters")
    out_h = conv_output_size(height, kernel_h, stride, padding)
    out_w = conv_output_size(width, kernel_w, stride, padding)

    if padding:
        padded = np.pad(x.value, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        padded = x.value
    # [B, C, out_h, out_w, kh, kw]
    windows = sliding_window_view(padded, (kernel_h, kernel_w), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, weight.value, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias.value[None, :, None, None]

    def backward_fn(grad):
        d_bias = grad.sum(axis=(0, 2, 3))
        d_weight = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        d_windows = np.tensordot(grad, weight.value, axes=([1], [0]))
        d_padded = np.zeros(padded.shape, dtype=grad.dtype)
        for i in range(kernel_h):
            rows = _window_slices(i, out_h, stride)
            for j in range(kernel_w):
                cols = _window_slices(j, out_w, stride)
                d_padded[:, :, rows, cols] += d_windows[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        d_x = d_padded[:, :, padding:padding + height, padding:padding + width] if padding else d_padded
        return d_x, d_weight, d_bias

    return record(out, 'conv2d', (x, weight, bias), backward_fn)


def _pool_windows(x, kernel, stride, op):
    if x.ndim != 4:
        raise DimensionError(f"{op} expects [B, C, H, W] input, got {x.shape}")
    height, width = x.shape[2:]
    if height < kernel or width < kernel:
        raise DimensionError(f"{op}: window {kernel}x{kernel} is larger than input {height}x{width}")
    out_h = conv_output_size(height, kernel, stride)
    out_w = conv_output_size(width, kernel, stride)
    windows = sliding_window_view(x.value, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    return windows, out_h, out_w


def max_pool2d(x, kernel=3, stride=2):
    """Max pooling; the gradient goes to the first maximum in row-major scan order."""
    x = as_node(x)
    windows, out_h, out_w = _pool_windows(x, kernel, stride, 'max_pool2d')
    batch, channels = x.shape[:2]
    flat = windows.reshape(batch, channels, out_h, out_w, kernel * kernel)
    winner = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]

    def backward_fn(grad):
        d_x = np.zeros_like(x.value, dtype=grad.dtype)
        rows = np.arange(out_h)[:, None] * stride + winner // kernel
        cols = np.arange(out_w)[None, :] * stride + winner % kernel
        batch_index = np.arange(batch)[:, None, None, None]
        channel_index = np.arange(channels)[None, :, None, None]
        np.add.at(d_x, (batch_index, channel_index, rows, cols), grad)
        return (d_x,)

    return record(out, 'max_pool2d', (x,), backward_fn)


def avg_pool2d(x, kernel=6, stride=6):
    x = as_node(x)
    windows, out_h, out_w = _pool_windows(x, kernel, stride, 'avg_pool2d')
    out = windows.mean(axis=(-2, -1))

    def backward_fn(grad):
        d_x = np.zeros_like(x.value, dtype=grad.dtype)
        share = grad / (kernel * kernel)
        for i in range(kernel):
            rows = _window_slices(i, out_h, stride)
            for j in range(kernel):
                d_x[:, :, rows, _window_slices(j, out_w, stride)] += share
        return (d_x,)

    return record(np.ascontiguousarray(out), 'avg_pool2d', (x,), backward_fn)


def batch_norm(x, gamma, beta, running_mean, running_var, training=True,
               momentum=BN_MOMENTUM, eps=BN_EPS):
    """
    Batch normalization over every axis but the channel axis.

    Train mode normalizes with the biased batch variance and returns running
    statistics updated with the unbiased estimate; eval mode reads the running
    statistics only.

    Returns:
        tuple: (output Node, new running mean, new running var)
    """
    x, gamma, beta = as_node(x), as_node(gamma), as_node(beta)
    if x.ndim == 4:
        axes = (0, 2, 3)
    elif x.ndim == 2:
        axes = (0,)
    else:
        raise DimensionError(f"batch_norm expects [B, C] or [B, C, H, W], got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(f"batch_norm: {channels} channels but gamma {gamma.shape}, beta {beta.shape}")
    shape = [1] * x.ndim
    shape[1] = channels
    count = x.size // channels

    if training:
        if count < 2:
            raise ContractError("batch_norm in train mode needs at least 2 values per channel")
        mean = x.value.mean(axis=axes)
        var = x.value.var(axis=axes)
        unbiased = var * (count / (count - 1))
        new_mean = (1 - momentum) * running_mean + momentum * mean
        new_var = (1 - momentum) * running_var + momentum * unbiased
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var

    inv_std = (1 / np.sqrt(var + eps)).reshape(shape)
    x_hat = (x.value - mean.reshape(shape)) * inv_std
    out = gamma.value.reshape(shape) * x_hat + beta.value.reshape(shape)

    def backward_fn(grad):
        d_beta = grad.sum(axis=axes)
        d_gamma = (grad * x_hat).sum(axis=axes)
        d_x_hat = grad * gamma.value.reshape(shape)
        if training:
            d_x = inv_std / count * (
                count * d_x_hat
                - d_x_hat.sum(axis=axes, keepdims=True)
                - x_hat * (d_x_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        else:
            d_x = d_x_hat * inv_std
        return d_x, d_gamma, d_beta

    return record(out, 'batch_norm', (x, gamma, beta), backward_fn), new_mean, new_var


def standardize(x, eps=BN_EPS):
    """
    Per-sample zero mean and unit variance over every axis but the batch axis.
    Parameter-free and identical in train and eval mode.
    """
    x = as_node(x)
    if x.ndim < 2:
        raise DimensionError(f"standardize expects a batch axis and at least one more, got {x.shape}")
    axes = tuple(range(1, x.ndim))
    mean = x.value.mean(axis=axes, keepdims=True)
    inv_std = 1 / np.sqrt(x.value.var(axis=axes, keepdims=True) + eps)
    out = (x.value - mean) * inv_std

    def backward_fn(grad):
        return (inv_std * (
            grad
            - grad.mean(axis=axes, keepdims=True)
            - out * (grad * out).mean(axis=axes, keepdims=True)
        ),)

    return record(out, 'standardize', (x,), backward_fn)


def apply_mask(x, mask, scale=1.0):
    """Multiply by a fixed 0/1 mask times ``scale`` (dropout with a frozen draw)."""
    x = as_node(x)
    factor = (np.asarray(mask) * scale).astype(x.dtype)
    return mul(x, Node(factor))


def dropout(x, rate, rng, training=True):
    """Inverted dropout: kept units are scaled by 1/(1 - rate), eval is the identity."""
    if not 0 <= rate < 1:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_node(x)
    if not training or rate == 0:
        return x
    keep = 1.0 - rate
    return apply_mask(x, rng.bernoulli(x.shape, keep), 1.0 / keep)


def linear(x, weight, bias):
    """Affine map x . W^T + b for x of shape [B, in] and W of shape [out, in]."""
    x, weight, bias = as_node(x), as_node(weight), as_node(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    return add(matmul(x, transpose(weight)), bias)


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(np.asarray(logits)))


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label], max-shift stabilized."""
    logits = as_node(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects [B, K] logits, got {logits.shape}")
    batch, classes = logits.shape
    if batch < 1:
        raise ContractError("softmax_cross_entropy needs a non-empty batch")
    if labels.shape != (batch,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch of {batch}")
    if labels.min() < 0 or labels.max() >= classes:
        raise ContractError(f"labels must lie in [0, {classes}), got {sorted(set(labels.tolist()))}")
    rows = np.arange(batch)
    log_probs = log_softmax(logits.value)
    loss = np.asarray(-log_probs[rows, labels].mean(), dtype=logits.dtype)

    def backward_fn(grad):
        d_logits = np.exp(log_probs)
        d_logits[rows, labels] -= 1
        return (d_logits * (grad / batch),)

    return record(loss, 'softmax_cross_entropy', (logits,), backward_fn)


GAIN_SQUARED = {'relu': 2.0, 'linear': 1.0}


def kaiming_uniform(rng, shape, fan_in, dtype='f32', nonlinearity='relu'):
    """
    U(-b, b) with b = sqrt(3 * gain^2 / fan_in): sqrt(6 / fan_in) for layers
    followed by a ReLU, sqrt(3 / fan_in) for output layers ('linear').
    """
    if nonlinearity not in GAIN_SQUARED:
        raise ContractError(f"nonlinearity must be one of {sorted(GAIN_SQUARED)}, got '{nonlinearity}'")
    bound = math.sqrt(3.0 * GAIN_SQUARED[nonlinearity] / fan_in)
    return rng.uniform(-bound, bound, shape, dtype)


class Layer:
    """Base class: named parameters, named buffers and a train/eval mode."""

    def __init__(self):
        self.mode = 'train'

    def set_mode(self, mode):
        if mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got '{mode}'")
        self.mode = mode

    @property
    def training(self):
        return self.mode == 'train'

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def __call__(self, x):
        return self.forward(x)


def _parameter(array, name):
    return Node(array, requires_grad=True, name=name)


class Conv2dLayer(Layer):
    def __init__(self, weight, bias, stride=1, padding=0, name='conv'):
        super().__init__()
        if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
            raise DimensionError(f"conv weight must be [outC, inC, k, k], got {weight.shape}")
        self.weight = _parameter(weight, f"{name}.weight")
        self.bias = _parameter(bias, f"{name}.bias")
        self.stride = stride
        self.padding = padding
        self.name = name

    @property
    def kernel_size(self):
        return self.weight.shape[2]

    def output_size(self, size):
        return conv_output_size(size, self.kernel_size, self.stride, self.padding)

    def parameters(self):
        return {'weight': self.weight, 'bias': self.bias}

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNormLayer(Layer):
    def __init__(self, gamma, beta, running_mean, running_var, momentum=BN_MOMENTUM, eps=BN_EPS, name='bn'):
        super().__init__()
        self.gamma = _parameter(gamma, f"{name}.gamma")
        self.beta = _parameter(beta, f"{name}.beta")
        self.running_mean = running_mean
        self.running_var = running_var
        self.momentum = momentum
        self.eps = eps
        self.name = name

    def parameters(self):
        return {'gamma': self.gamma, 'beta': self.beta}

    def buffers(self):
        return {'running_mean': self.running_mean, 'running_var': self.running_var}

    def forward(self, x):
        out, self.running_mean, self.running_var = batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )
        return out


class DropoutLayer(Layer):
    def __init__(self, rate, rng):
        super().__init__()
        if not 0 <= rate < 1:
            raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x):
        return dropout(x, self.rate, self.rng, self.training)


class LinearLayer(Layer):
    def __init__(self, weight, bias, name='fc'):
        super().__init__()
        self.weight = _parameter(weight, f"{name}.weight")
        self.bias = _parameter(bias, f"{name}.bias")
        self.name = name

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    def parameters(self):
        return {'weight': self.weight, 'bias': self.bias}

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class MaxPool2dLayer(Layer):
    def __init__(self, kernel=3, stride=2):
        super().__init__()
        self.kernel = kernel
        self.stride = stride

    def forward(self, x):
        return max_pool2d(x, self.kernel, self.stride)


class AvgPool2dLayer(Layer):
    def __init__(self, kernel=6, stride=None):
        super().__init__()
        self.kernel = kernel
        self.stride = stride or kernel

    def forward(self, x):
        return avg_pool2d(x, self.kernel, self.stride)
