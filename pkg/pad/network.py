"""
MVANet: a small convolutional base network feeding several parallel
classifier branches, each seeing its own dropout sample of the shared
feature, fused by concatenation and a final fully connected layer.

Inputs are standardized per image unless ``input_norm`` is 'none'. Base
blocks are conv -> ReLU -> BN, with max pools after the blocks listed in
``maxpool_after`` and an average pool reducing the last map to a channel
vector. Every branch runs dropout -> FC -> ReLU -> dropout -> FC -> ReLU -> FC.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, Rng, as_node, concat, no_grad, relu, reshape, resolve_dtype
from .exceptions import ContractError, DimensionError, SpecError
from .labels import ATTACK, BONAFIDE, label_name
from .layers import (
    AvgPool2dLayer,
    BatchNormLayer,
    Conv2dLayer,
    DropoutLayer,
    LinearLayer,
    MaxPool2dLayer,
    MODES,
    conv_output_size,
    kaiming_uniform,
    softmax,
    softmax_cross_entropy,
    standardize,
)

logger = logging.getLogger(__name__)

BUFFER_SUFFIXES = ('.running_mean', '.running_var')
OUTPUT_WEIGHTS = ('.fc3.weight', 'head.weight')
INPUT_NORMS = ('per-image', 'none')

DEFAULT_PARAMETER_COUNT = 5_774_420


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative MVANet topology. Block indices in ``maxpool_after`` are 1-based."""

    input_channels: int = 1
    input_size: int = 224
    base_channels: tuple = (64, 192, 384, 256, 256)
    conv_kernels: tuple = (11, 3, 3, 3, 3)
    conv_strides: tuple = (4, 1, 1, 1, 1)
    conv_pads: tuple = (2, 1, 1, 1, 1)
    maxpool_after: tuple = (1, 2, 5)
    maxpool_kernel: int = 3
    maxpool_stride: int = 2
    avgpool_k: int = 6
    branch_widths: tuple = ((2048, 1024, 2), (1024, 512, 2), (256, 128, 2))
    n_branches: int = 3
    dropout_rate: float = 0.5
    fusion_width: int = 6
    head_out: int = 2
    input_norm: str = 'per-image'

    def __post_init__(self):
        # lists coming from JSON or config files become tuples so specs stay hashable
        for name in ('base_channels', 'conv_kernels', 'conv_strides', 'conv_pads', 'maxpool_after'):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        object.__setattr__(
            self, 'branch_widths', tuple(tuple(int(v) for v in widths) for widths in self.branch_widths)
        )

    @property
    def n_blocks(self):
        return len(self.base_channels)

    @property
    def feature_width(self):
        return self.base_channels[-1]

    def validate(self):
        lengths = {len(self.base_channels), len(self.conv_kernels), len(self.conv_strides), len(self.conv_pads)}
        if len(lengths) != 1 or self.n_blocks < 1:
            raise SpecError("base_channels, conv_kernels, conv_strides and conv_pads must have one entry per block")
        if any(v < 1 for v in self.base_channels + self.conv_kernels + self.conv_strides):
            raise SpecError("channel counts, kernels and strides must be positive")
        if any(v < 0 for v in self.conv_pads):
            raise SpecError("conv paddings must be non-negative")
        if any(not 1 <= index <= self.n_blocks for index in self.maxpool_after):
            raise SpecError(f"maxpool_after indices must lie in 1..{self.n_blocks}, got {list(self.maxpool_after)}")
        if self.input_channels < 1 or self.input_size < 1:
            raise SpecError("input_channels and input_size must be positive")
        if self.n_branches < 1 or self.n_branches != len(self.branch_widths):
            raise SpecError(
                f"n_branches is {self.n_branches} but {len(self.branch_widths)} branch width lists are given"
            )
        for index, widths in enumerate(self.branch_widths, start=1):
            if len(widths) != 3 or any(w < 1 for w in widths):
                raise SpecError(f"branch {index} needs three positive widths, got {list(widths)}")
            if widths[-1] != self.head_out:
                raise SpecError(f"branch {index} must end in width {self.head_out}, got {widths[-1]}")
        if self.fusion_width != self.n_branches * self.head_out:
            raise SpecError(
                f"fusion_width must be {self.n_branches * self.head_out} for {self.n_branches} branches, "
                f"got {self.fusion_width}"
            )
        if not 0 <= self.dropout_rate < 1:
            raise SpecError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.input_norm not in INPUT_NORMS:
            raise SpecError(f"input_norm must be one of {list(INPUT_NORMS)}, got '{self.input_norm}'")
        self.shape_walk()
        return self

    def _base_walk(self):
        size = self.input_size
        stages = [('input', size)]
        pools = 0
        for index in range(self.n_blocks):
            size = conv_output_size(size, self.conv_kernels[index], self.conv_strides[index], self.conv_pads[index])
            stages.append((f'conv{index + 1}', size))
            if index + 1 in self.maxpool_after:
                pools += 1
                size = conv_output_size(size, self.maxpool_kernel, self.maxpool_stride)
                stages.append((f'pool{pools}', size))
        return stages

    def shape_walk(self):
        """
        Spatial size after every stage, starting from the input.

        Returns:
            list of (stage name, size) pairs ending with ('avgpool', 1)
        """
        try:
            stages = self._base_walk()
            size = stages[-1][1]
            if size < self.avgpool_k:
                raise DimensionError(f"avgpool window {self.avgpool_k} exceeds {size}x{size} map")
            size = conv_output_size(size, self.avgpool_k, self.avgpool_k)
        except DimensionError as e:
            raise SpecError(f"input size {self.input_size} does not fit the base network: {e}")
        if size != 1:
            raise SpecError(f"average pool leaves a {size}x{size} map; the base feature must be a channel vector")
        stages.append(('avgpool', size))
        return stages

    def shape_chain(self):
        return [size for _, size in self.shape_walk()]

    def with_branches(self, branch_widths):
        """A copy with other branch widths; n_branches and fusion_width follow."""
        return dataclasses.replace(
            self,
            branch_widths=branch_widths,
            n_branches=len(branch_widths),
            fusion_width=len(branch_widths) * self.head_out,
        )

    def to_dict(self):
        data = dataclasses.asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = json.loads(json.dumps(value))
        return data

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SpecError(f"Unknown network spec fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as e:
            raise SpecError(f"Invalid network spec: {e}")


def default_spec():
    return NetworkSpec().validate()


def small_spec(input_size=64):
    """Desk-scale spec; the average pool always covers the final map."""
    spec = NetworkSpec(
        input_size=input_size,
        base_channels=(16, 24, 32, 32, 32),
        conv_strides=(2, 1, 1, 1, 1),
        conv_pads=(5, 1, 1, 1, 1),
        maxpool_after=(1, 2),
        avgpool_k=1,
        branch_widths=((128, 64, 2), (64, 32, 2), (32, 16, 2)),
    )
    try:
        final = spec._base_walk()[-1][1]
    except DimensionError as e:
        raise SpecError(f"input size {input_size} does not fit the small network: {e}")
    return dataclasses.replace(spec, avgpool_k=final).validate()


def parameter_shapes(spec):
    """Ordered (name, shape) table for every parameter and running statistic."""
    shapes = []
    in_channels = spec.input_channels
    for index in range(spec.n_blocks):
        out_channels, kernel = spec.base_channels[index], spec.conv_kernels[index]
        shapes.append((f'conv{index + 1}.weight', (out_channels, in_channels, kernel, kernel)))
        shapes.append((f'conv{index + 1}.bias', (out_channels,)))
        for suffix in ('gamma', 'beta', 'running_mean', 'running_var'):
            shapes.append((f'bn{index + 1}.{suffix}', (out_channels,)))
        in_channels = out_channels
    for index, widths in enumerate(spec.branch_widths, start=1):
        width_in = spec.feature_width
        for layer, width_out in enumerate(widths, start=1):
            shapes.append((f'branch{index}.fc{layer}.weight', (width_out, width_in)))
            shapes.append((f'branch{index}.fc{layer}.bias', (width_out,)))
            width_in = width_out
    shapes.append(('head.weight', (spec.head_out, spec.fusion_width)))
    shapes.append(('head.bias', (spec.head_out,)))
    return shapes


def is_buffer(name):
    return name.endswith(BUFFER_SUFFIXES)


def count_parameters(spec):
    return sum(int(np.prod(shape)) for name, shape in parameter_shapes(spec) if not is_buffer(name))


def init_parameters(spec, rng, dtype='f32'):
    """
    Draw a complete parameter set for ``spec``.

    Each tensor comes from its own stream ``rng.split(name)``, so a parameter's
    initial value depends only on the seed and its name. Weights feeding a ReLU
    use the ReLU Kaiming bound; the last FC of every branch and the head have
    no ReLU after them and use the linear one.

    Returns:
        dict: name -> array, in ``parameter_shapes`` order
    """
    dtype = resolve_dtype(dtype)
    params = {}
    for name, shape in parameter_shapes(spec):
        if name.endswith('.weight'):
            fan_in = int(np.prod(shape[1:]))
            nonlinearity = 'linear' if name.endswith(OUTPUT_WEIGHTS) else 'relu'
            params[name] = kaiming_uniform(rng.split(name), shape, fan_in, dtype, nonlinearity)
        elif name.endswith(('.gamma', '.running_var')):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


@dataclass
class ForwardResult:
    logits: Node
    branch_logits: list
    fused: Node
    base_features: Node
    feature_maps: dict = field(default_factory=dict)
    embeddings: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)


@dataclass
class Predictions:
    classes: np.ndarray
    scores: np.ndarray

    @property
    def labels(self):
        return [label_name(c) for c in self.classes]


class Branch:
    """One classifier branch with its two dropout samples."""

    def __init__(self, index, params, rate, rng):
        self.index = index
        prefix = f'branch{index}'
        self.fcs = [
            LinearLayer(params[f'{prefix}.fc{layer}.weight'], params[f'{prefix}.fc{layer}.bias'],
                        name=f'{prefix}.fc{layer}')
            for layer in (1, 2, 3)
        ]
        self.dropouts = [DropoutLayer(rate, None), DropoutLayer(rate, None)]
        self.reseed(rng)

    def reseed(self, rng):
        for position, layer in enumerate(self.dropouts, start=1):
            layer.rng = rng.split(f'branch{self.index}', 'dropout', position)

    def layers(self):
        return self.dropouts + self.fcs

    def __call__(self, features):
        hidden = relu(self.fcs[0](self.dropouts[0](features)))
        embedding = relu(self.fcs[1](self.dropouts[1](hidden)))
        return self.fcs[2](embedding), embedding


class MVANet:
    def __init__(self, spec, params, rng, dtype='f32'):
        self.spec = spec
        self.dtype = resolve_dtype(dtype)
        self.seed = rng.seed
        self.mode = 'train'
        self.convs = []
        self.bns = []
        for index in range(spec.n_blocks):
            name = index + 1
            self.convs.append(Conv2dLayer(
                params[f'conv{name}.weight'], params[f'conv{name}.bias'],
                stride=spec.conv_strides[index], padding=spec.conv_pads[index], name=f'conv{name}',
            ))
            self.bns.append(BatchNormLayer(
                params[f'bn{name}.gamma'], params[f'bn{name}.beta'],
                params[f'bn{name}.running_mean'], params[f'bn{name}.running_var'], name=f'bn{name}',
            ))
        self.maxpool = MaxPool2dLayer(spec.maxpool_kernel, spec.maxpool_stride)
        self.avgpool = AvgPool2dLayer(spec.avgpool_k)
        self.branches = [
            Branch(index, params, spec.dropout_rate, rng)
            for index in range(1, spec.n_branches + 1)
        ]
        self.head = LinearLayer(params['head.weight'], params['head.bias'], name='head')

    def layers(self):
        layers = [*self.convs, *self.bns, self.maxpool, self.avgpool]
        for branch in self.branches:
            layers.extend(branch.layers())
        layers.append(self.head)
        return layers

    def set_mode(self, mode):
        if mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got '{mode}'")
        self.mode = mode
        for layer in self.layers():
            layer.set_mode(mode)

    def reseed(self, rng):
        """Restart every dropout stream from ``rng``."""
        for branch in self.branches:
            branch.reseed(rng)

    def named_parameters(self):
        named = {}
        for conv, bn in zip(self.convs, self.bns):
            named.update({f'{conv.name}.{k}': v for k, v in conv.parameters().items()})
            named.update({f'{bn.name}.{k}': v for k, v in bn.parameters().items()})
        for branch in self.branches:
            for fc in branch.fcs:
                named.update({f'{fc.name}.{k}': v for k, v in fc.parameters().items()})
        named.update({f'head.{k}': v for k, v in self.head.parameters().items()})
        return named

    def buffers(self):
        return {f'{bn.name}.{k}': v for bn in self.bns for k, v in bn.buffers().items()}

    def state(self):
        """Every tensor by name, in the canonical ``parameter_shapes`` order."""
        tensors = {name: node.value for name, node in self.named_parameters().items()}
        tensors.update(self.buffers())
        return {name: tensors[name] for name, _ in parameter_shapes(self.spec)}

    def load_state(self, tensors):
        parameters = self.named_parameters()
        for name, value in tensors.items():
            if name in parameters:
                parameters[name].value = np.array(value, dtype=self.dtype)
            elif is_buffer(name):
                bn_name, attribute = name.split('.', 1)
                setattr(self.bns[int(bn_name[2:]) - 1], attribute, np.array(value, dtype=self.dtype))
            else:
                raise ContractError(f"Unknown tensor '{name}'")

    def dropout_streams(self):
        return {
            f'branch{branch.index}.dropout{position}': layer.rng
            for branch in self.branches
            for position, layer in enumerate(branch.dropouts, start=1)
        }

    def zero_grad(self):
        for node in self.named_parameters().values():
            node.zero_grad()

    def _input(self, x):
        if not isinstance(x, Node):
            x = Node(np.asarray(x, dtype=self.dtype))
        spec = self.spec
        expected = (spec.input_channels, spec.input_size, spec.input_size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise DimensionError(f"MVANet expects input [B, {', '.join(map(str, expected))}], got {x.shape}")
        return x

    def forward(self, x, mode=None):
        if mode is not None:
            self.set_mode(mode)
        h = self._input(x)
        batch = h.shape[0]
        trace = [('input', h.shape)]
        if self.spec.input_norm == 'per-image':
            h = standardize(h)
        feature_maps = {}
        pools = 0
        for index, (conv, bn) in enumerate(zip(self.convs, self.bns), start=1):
            h = bn(relu(conv(h)))
            feature_maps[f'conv{index}'] = h
            trace.append((f'conv{index}', h.shape))
            if index in self.spec.maxpool_after:
                pools += 1
                h = self.maxpool(h)
                trace.append((f'pool{pools}', h.shape))
        h = self.avgpool(h)
        trace.append(('avgpool', h.shape))
        base = reshape(h, (batch, self.spec.feature_width))
        feature_maps['base'] = base

        branch_logits = []
        embeddings = {}
        for branch in self.branches:
            logits, embedding = branch(base)
            branch_logits.append(logits)
            embeddings[f'branch{branch.index}'] = embedding
        fused = concat(branch_logits, axis=1)
        logits = self.head(fused)
        return ForwardResult(
            logits=logits,
            branch_logits=branch_logits,
            fused=fused,
            base_features=base,
            feature_maps=feature_maps,
            embeddings=embeddings,
            trace=trace,
        )

    __call__ = forward


def build(spec, rng, dtype='f32'):
    spec.validate()
    model = MVANet(spec, init_parameters(spec, rng, dtype), rng.split('dropout'), dtype)
    logger.debug(f"Built MVANet with {count_parameters(spec)} parameters, shape chain {spec.shape_chain()}")
    return model


def loss(model, x, labels, mode='train'):
    """
    Cross-entropy on the head logits.

    Returns:
        tuple: (scalar loss Node, ForwardResult)
    """
    labels = np.asarray(labels)
    if labels.size == 0 or as_node(x).shape[0] == 0:
        raise ContractError("loss needs a non-empty batch")
    result = model.forward(x, mode)
    return softmax_cross_entropy(result.logits, labels), result


def decide(logits):
    """Argmax over (bonafide, attack); equal logits resolve to attack."""
    logits = np.asarray(logits)
    classes = np.where(logits[:, ATTACK] >= logits[:, BONAFIDE], ATTACK, BONAFIDE)
    return Predictions(classes=classes, scores=softmax(logits)[:, ATTACK])


def predict(model, x):
    with no_grad():
        result = model.forward(x, 'eval')
    return decide(result.logits.value)


def seeded_model(spec, seed, dtype='f32'):
    return build(spec, Rng(seed), dtype)
