import os
import tempfile

import numpy as np

from pad.data import write_manifest
from pad.synth import synth_manifest


class TempDirMixin:
    """Gives each test a scratch directory removed on cleanup."""

    def setUp(self):
        super().setUp()
        scratch = tempfile.TemporaryDirectory()
        self.addCleanup(scratch.cleanup)
        self.tmp = scratch.name

    def path(self, *parts):
        return os.path.join(self.tmp, *parts)

    def write(self, name, text):
        target = self.path(name)
        os.makedirs(os.path.dirname(target), exist_ok=True)
        with open(target, 'w') as handle:
            handle.write(text)
        return target

    def read_bytes(self, *parts):
        with open(self.path(*parts), 'rb') as handle:
            return handle.read()


def synthetic_manifest_file(directory, n=4, profiles=('A', 'B', 'C'), seed=7, size=32):
    """Write a manifest of in-memory synthetic samples and return its path."""
    path = os.path.join(directory, 'manifest.csv')
    write_manifest(synth_manifest(n, list(profiles), seed, size), path)
    return path


def naive_conv2d(x, w, b, stride, padding):
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    batch, _, height, width = padded.shape
    out_channels, _, kernel, _ = w.shape
    out_h = (height - kernel) // stride + 1
    out_w = (width - kernel) // stride + 1
    out = np.zeros((batch, out_channels, out_h, out_w))
    for n in range(batch):
        for o in range(out_channels):
            for i in range(out_h):
                for j in range(out_w):
                    window = padded[n, :, i * stride:i * stride + kernel, j * stride:j * stride + kernel]
                    out[n, o, i, j] = (window * w[o]).sum() + b[o]
    return out
