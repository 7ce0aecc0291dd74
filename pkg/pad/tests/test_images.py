import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from PIL import Image

from pad.autodiff import Rng
from pad.exceptions import CorruptImageError, ImageFormatError
from pad.images import decode_image, encode_pgm, min_max_uint8, to_uint8

from .utils import TempDirMixin


class DecodeImageTest(TempDirMixin, SimpleTestCase):
    def write_bytes(self, name, blob):
        with open(self.path(name), 'wb') as handle:
            handle.write(blob)
        return self.path(name)

    def test_two_by_two_pgm(self):
        path = self.write_bytes('tiny.pgm', b'P5\n2 2\n255\n' + bytes([0, 255, 0, 255]))
        image = decode_image(path)
        self.assertEqual(image.shape, (1, 2, 2))
        self.assertEqual(image.dtype, np.float32)
        assert_array_equal(image[0], [[0.0, 1.0], [0.0, 1.0]])

    def test_grayscale_png(self):
        pixels = np.arange(16, dtype=np.uint8).reshape(4, 4) * 16
        Image.fromarray(pixels).save(self.path('gray.png'))
        assert_allclose(decode_image(self.path('gray.png'), dtype='f64')[0], pixels / 255.0)

    def test_round_trip_within_one_level(self):
        values = Rng(0).uniform(0, 1, (9, 7), 'f64')
        encode_pgm(to_uint8(values), self.path('round.pgm'))
        decoded = decode_image(self.path('round.pgm'), dtype='f64')[0]
        self.assertLessEqual(np.abs(decoded - values).max(), 1 / 255)

    def test_resize_keeps_constant_images_constant(self):
        encode_pgm(np.full((10, 10), 128, dtype=np.uint8), self.path('flat.pgm'))
        image = decode_image(self.path('flat.pgm'), target_size=32)
        self.assertEqual(image.shape, (1, 32, 32))
        assert_allclose(image, np.full((1, 32, 32), 128 / 255), atol=1e-6)

    def test_unsupported_format(self):
        path = self.write_bytes('anim.gif', b'GIF89a\x01\x00\x01\x00\x00\x00\x00;')
        with self.assertRaises(ImageFormatError):
            decode_image(path)

    def test_colour_png(self):
        Image.new('RGB', (2, 2)).save(self.path('rgb.png'))
        with self.assertRaises(ImageFormatError):
            decode_image(self.path('rgb.png'))

    def test_truncated_pgm(self):
        path = self.write_bytes('short.pgm', b'P5\n4 4\n255\n' + bytes(3))
        with self.assertRaises(CorruptImageError):
            decode_image(path)


class PixelHelpersTest(SimpleTestCase):
    def test_to_uint8_clips(self):
        assert_array_equal(to_uint8([-0.5, 0.5, 1.5]), [0, 128, 255])

    def test_min_max_of_constant_is_zero(self):
        assert_array_equal(min_max_uint8(np.full((3, 3), 4.2)), np.zeros((3, 3), dtype=np.uint8))

    def test_min_max_stretches_to_full_range(self):
        assert_array_equal(min_max_uint8([[1.0, 2.0, 3.0]]), [[0, 128, 255]])

    def test_encode_rejects_float_arrays(self):
        with self.assertRaises(ImageFormatError):
            encode_pgm(np.zeros((2, 2)), 'unused.pgm')
