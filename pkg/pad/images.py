"""
Grayscale image I/O on top of Pillow.

Images enter the network as float arrays of shape [1, H, W] with values in
[0, 1]; 8-bit pixels are divided by 255.
"""

import io
import logging

import numpy as np
from PIL import Image, UnidentifiedImageError

from .autodiff import resolve_dtype
from .exceptions import CorruptImageError, ImageFormatError

logger = logging.getLogger(__name__)

PGM_MAGIC = b'P5'
PNG_MAGIC = b'\x89PNG\r\n\x1a\n'


def _sniff(blob, path):
    if blob.startswith(PGM_MAGIC):
        return 'pgm'
    if blob.startswith(PNG_MAGIC):
        return 'png'
    raise ImageFormatError(f"{path}: only 8-bit grayscale PGM (P5) or PNG images are supported")


def to_uint8(pixels):
    """Quantize values in [0, 1] to 8-bit, clipping outside values."""
    return np.round(np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0) * 255).astype(np.uint8)


def resize_bilinear(pixels, size):
    """Bilinear resize of a 2-D float array to ``size`` x ``size``."""
    pixels = np.asarray(pixels, dtype=np.float32)
    if pixels.shape == (size, size):
        return pixels.copy()
    image = Image.fromarray(pixels)
    return np.asarray(image.resize((size, size), Image.Resampling.BILINEAR), dtype=np.float32)


def decode_image(path, target_size=None, dtype='f32'):
    """
    Read an 8-bit grayscale image as a [1, H, W] array in [0, 1].

    Args:
        path: PGM (P5) or grayscale PNG file
        target_size: optional square size to resize to (bilinear)
        dtype: 'f32' or 'f64'

    Raises:
        ImageFormatError: not a P5/PNG file or not 8-bit grayscale
        CorruptImageError: the payload cannot be decoded
    """
    with open(path, 'rb') as handle:
        blob = handle.read()
    kind = _sniff(blob, path)
    try:
        with Image.open(io.BytesIO(blob)) as image:
            image.load()
            if image.mode != 'L':
                raise ImageFormatError(f"{path}: expected 8-bit grayscale, found mode {image.mode}")
            pixels = np.asarray(image, dtype=np.float64) / 255.0
    except ImageFormatError:
        raise
    except (OSError, SyntaxError, ValueError, UnidentifiedImageError) as e:
        raise CorruptImageError(f"{path}: corrupt {kind.upper()} payload ({e})")
    if target_size is not None and pixels.shape != (target_size, target_size):
        pixels = resize_bilinear(pixels, target_size)
    return pixels.astype(resolve_dtype(dtype))[None, :, :]


def encode_pgm(pixels, path):
    """Write a 2-D uint8 array as a binary P5 PGM file."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 2:
        raise ImageFormatError(f"PGM export needs a 2-D uint8 array, got {pixels.dtype} {pixels.shape}")
    Image.fromarray(pixels).save(path, format='PPM')


def min_max_uint8(values):
    """Stretch ``values`` to 0..255; a constant array maps to zeros."""
    values = np.asarray(values, dtype=np.float64)
    low, high = values.min(), values.max()
    if high <= low:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - low) / (high - low) * 255).astype(np.uint8)
