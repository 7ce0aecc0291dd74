"""
Checkpoint files.

Layout::

    MVANETCK\\n
    version 1\\n
    header <byte length>\\n
    <text header>
    <raw little-endian payloads, in header order>

The text header holds one record per line: ``spec <json>``, ``dtype``,
``seed``, ``epoch``, ``rng <stream> <json>`` for every dropout stream,
``optimizer <json>`` when Adam state is present, then one
``tensor <name> <dtype> <d0,d1,...>`` line per payload. Tensors are the model
parameters and running statistics, followed by ``adam.m.*`` and ``adam.v.*``
moments.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import DTYPES, Rng, dtype_name, resolve_dtype
from .exceptions import (
    CheckpointShapeError,
    CheckpointVersionError,
    CorruptCheckpointError,
    SpecError,
)
from .network import MVANet, NetworkSpec, parameter_shapes
from .optim import AdamState

logger = logging.getLogger(__name__)

MAGIC = b'MVANETCK\n'
FORMAT_VERSION = 1
ADAM_PREFIXES = ('adam.m.', 'adam.v.')


@dataclass
class Checkpoint:
    model: MVANet
    epoch: int = 0
    adam_state: AdamState = None


def _dumps(data):
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


def _tensor_line(name, array):
    dims = ','.join(str(d) for d in array.shape)
    return f"tensor {name} {dtype_name(array.dtype)} {dims}"


def save_checkpoint(model, path, epoch=0, adam_state=None):
    tensors = dict(model.state())
    lines = [
        f"spec {_dumps(model.spec.to_dict())}",
        f"dtype {dtype_name(model.dtype)}",
        f"seed {model.seed}",
        f"epoch {int(epoch)}",
    ]
    for stream, rng in model.dropout_streams().items():
        lines.append(f"rng {stream} {_dumps(rng.get_state())}")
    if adam_state is not None:
        lines.append(f"optimizer {_dumps(adam_state.hyperparameters())}")
        for prefix, moments in zip(ADAM_PREFIXES, (adam_state.m, adam_state.v)):
            for name in tensors.copy():
                if name in moments:
                    tensors[prefix + name] = moments[name]
    lines.extend(_tensor_line(name, array) for name, array in tensors.items())
    header = ('\n'.join(lines) + '\n').encode('utf-8')

    with open(path, 'wb') as handle:
        handle.write(MAGIC)
        handle.write(f"version {FORMAT_VERSION}\n".encode('ascii'))
        handle.write(f"header {len(header)}\n".encode('ascii'))
        handle.write(header)
        for array in tensors.values():
            little = np.dtype(array.dtype).newbyteorder('<')
            handle.write(np.ascontiguousarray(array, dtype=little).tobytes())
    logger.debug(f"Saved checkpoint with {len(tensors)} tensors to {path}")


def _read_line(blob, offset, what):
    end = blob.find(b'\n', offset)
    if end < 0:
        raise CorruptCheckpointError(f"Checkpoint truncated before the {what} line")
    try:
        return blob[offset:end].decode('ascii'), end + 1
    except UnicodeDecodeError:
        raise CorruptCheckpointError(f"Checkpoint {what} line is not text")


def _keyword_value(line, keyword):
    key, _, value = line.partition(' ')
    if key != keyword or not value:
        raise CorruptCheckpointError(f"Expected '{keyword}' record, found '{line[:40]}'")
    return value


def _parse_header(text):
    spec, dtype, seed, epoch, optimizer = None, None, None, 0, None
    streams, tensors = {}, []
    try:
        for line in text.splitlines():
            key, _, value = line.partition(' ')
            if key == 'spec':
                spec = json.loads(value)
            elif key == 'dtype':
                dtype = resolve_dtype(value)
            elif key == 'seed':
                seed = int(value)
            elif key == 'epoch':
                epoch = int(value)
            elif key == 'rng':
                stream, state = value.split(' ', 1)
                streams[stream] = json.loads(state)
            elif key == 'optimizer':
                optimizer = json.loads(value)
            elif key == 'tensor':
                name, tensor_dtype, dims = value.split(' ')
                if tensor_dtype not in DTYPES:
                    raise ValueError(f"unknown tensor dtype '{tensor_dtype}'")
                shape = tuple(int(d) for d in dims.split(',') if d)
                tensors.append((name, tensor_dtype, shape))
            else:
                raise ValueError(f"unknown record '{key}'")
    except (ValueError, json.JSONDecodeError) as e:
        raise CorruptCheckpointError(f"Malformed checkpoint header: {e}")
    if spec is None or dtype is None or seed is None:
        raise CorruptCheckpointError("Checkpoint header lacks spec, dtype or seed")
    return spec, dtype, seed, epoch, streams, optimizer, tensors


def read_checkpoint(path):
    """
    Load a checkpoint written by ``save_checkpoint``.

    Raises:
        CorruptCheckpointError: bad magic, malformed header or truncated payload
        CheckpointVersionError: unsupported format version
        CheckpointShapeError: tensors disagree with the embedded spec
    """
    with open(path, 'rb') as handle:
        blob = handle.read()
    if not blob.startswith(MAGIC):
        raise CorruptCheckpointError(f"{path} is not an MVANet checkpoint")
    line, offset = _read_line(blob, len(MAGIC), 'version')
    try:
        version = int(_keyword_value(line, 'version'))
    except ValueError:
        raise CorruptCheckpointError(f"Unreadable checkpoint version '{line}'")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"Checkpoint version {version} is not supported (expected {FORMAT_VERSION})")
    line, offset = _read_line(blob, offset, 'header')
    try:
        header_length = int(_keyword_value(line, 'header'))
    except ValueError:
        raise CorruptCheckpointError(f"Unreadable header length '{line}'")
    if offset + header_length > len(blob):
        raise CorruptCheckpointError("Checkpoint truncated inside the header")
    try:
        text = blob[offset:offset + header_length].decode('utf-8')
    except UnicodeDecodeError:
        raise CorruptCheckpointError("Checkpoint header is not UTF-8")
    offset += header_length
    spec_data, dtype, seed, epoch, streams, optimizer, table = _parse_header(text)

    try:
        spec = NetworkSpec.from_dict(spec_data).validate()
    except SpecError as e:
        raise CorruptCheckpointError(f"Embedded network spec is invalid: {e}")

    arrays = {}
    for name, tensor_dtype, shape in table:
        little = np.dtype(DTYPES[tensor_dtype]).newbyteorder('<')
        nbytes = int(np.prod(shape, dtype=np.int64)) * little.itemsize
        if offset + nbytes > len(blob):
            raise CorruptCheckpointError(f"Checkpoint truncated inside tensor '{name}'")
        payload = np.frombuffer(blob, dtype=little, count=nbytes // little.itemsize, offset=offset)
        arrays[name] = payload.reshape(shape).astype(DTYPES[tensor_dtype])
        offset += nbytes
    if offset != len(blob):
        raise CorruptCheckpointError(f"{len(blob) - offset} unexpected trailing bytes in checkpoint")

    expected = dict(parameter_shapes(spec))
    model_tensors = {name: array for name, array in arrays.items() if not name.startswith(ADAM_PREFIXES)}
    if set(model_tensors) != set(expected):
        missing = sorted(set(expected) - set(model_tensors))
        extra = sorted(set(model_tensors) - set(expected))
        raise CheckpointShapeError(f"Checkpoint tensors do not match the network spec (missing {missing}, extra {extra})")
    for name, array in model_tensors.items():
        if array.shape != tuple(expected[name]):
            raise CheckpointShapeError(
                f"Tensor '{name}' has shape {array.shape}, spec requires {tuple(expected[name])}"
            )

    model = MVANet(spec, model_tensors, Rng(seed).split('dropout'), dtype)
    for stream, rng in model.dropout_streams().items():
        if stream in streams:
            rng.set_state(streams[stream])

    adam_state = None
    if optimizer is not None:
        adam_state = AdamState(
            **optimizer,
            m={name[len('adam.m.'):]: a for name, a in arrays.items() if name.startswith('adam.m.')},
            v={name[len('adam.v.'):]: a for name, a in arrays.items() if name.startswith('adam.v.')},
        )
    return Checkpoint(model=model, epoch=epoch, adam_state=adam_state)


def load_checkpoint(path):
    return read_checkpoint(path).model
