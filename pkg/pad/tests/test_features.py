import csv
import os

from django.test import SimpleTestCase

from pad.autodiff import Rng
from pad.exceptions import FeatureExportError
from pad.features import export_features, layer_ids
from pad.images import decode_image
from pad.network import default_spec, seeded_model, small_spec

from .utils import TempDirMixin


class ExportFeaturesTest(TempDirMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.model = seeded_model(small_spec(32), 0)
        self.x = Rng(1).uniform(0, 1, (2, 1, 32, 32))

    def test_layer_ids(self):
        self.assertEqual(
            layer_ids(self.model.spec),
            ['conv1', 'conv2', 'conv3', 'conv4', 'conv5', 'base', 'branch1', 'branch2', 'branch3'],
        )

    def test_conv_maps_become_one_image_per_channel(self):
        written = export_features(self.model, self.x, 'conv1', self.tmp)
        self.assertEqual(len(written), 2 * 16)
        image = decode_image(self.path('conv1_s001_c015.pgm'))
        self.assertEqual(image.shape, (1, 16, 16))

    def test_base_features(self):
        export_features(self.model, self.x, 'base', self.tmp)
        self.assertEqual(decode_image(self.path('base.pgm')).shape, (1, 2, 32))
        with open(self.path('base.csv')) as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows[0][:3], ['sample', 'f0', 'f1'])
        self.assertEqual(len(rows), 3)
        self.assertEqual(len(rows[1]), 33)

    def test_branch_embedding(self):
        export_features(self.model, self.x, 'branch2', self.tmp)
        with open(self.path('branch2.csv')) as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(len(rows[0]), 1 + 32)
        self.assertEqual([row[0] for row in rows[1:]], ['0', '1'])

    def test_unknown_layer(self):
        with self.assertRaises(FeatureExportError):
            export_features(self.model, self.x, 'conv6', self.tmp)
        self.assertEqual(os.listdir(self.tmp), [])


class DefaultSpecExportTest(TempDirMixin, SimpleTestCase):
    def test_second_convolution_gives_192_maps_of_27_by_27(self):
        model = seeded_model(default_spec(), 0)
        written = export_features(model, Rng(2).uniform(0, 1, (1, 1, 224, 224)), 'conv2', self.tmp)
        self.assertEqual(len(written), 192)
        self.assertEqual(len(os.listdir(self.tmp)), 192)
        for name in ('conv2_s000_c000.pgm', 'conv2_s000_c191.pgm'):
            self.assertEqual(decode_image(self.path(name)).shape, (1, 27, 27), name)
