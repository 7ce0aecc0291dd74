"""
Desk-scale end-to-end checks. They train for minutes, so they only run with
PAD_RUN_ACCEPTANCE=1 in the environment.
"""

import dataclasses
import os
import unittest

from django.test import SimpleTestCase

from pad.autodiff import backward
from pad.config import RunConfig
from pad.data import load_dataset, write_manifest
from pad.diagnostics import run_gradcheck_suite
from pad.network import loss, seeded_model, small_spec
from pad.optim import Adam, AdamState
from pad.services import run_protocol
from pad.synth import synth_manifest

from .utils import TempDirMixin

RUN_ACCEPTANCE = os.environ.get('PAD_RUN_ACCEPTANCE') == '1'


@unittest.skipUnless(RUN_ACCEPTANCE, 'set PAD_RUN_ACCEPTANCE=1 to run')
class DeskScaleTest(TempDirMixin, SimpleTestCase):
    def config(self, **values):
        manifest = self.path('manifest.csv')
        write_manifest(synth_manifest(750, ['A', 'B', 'C'], seed=0, size=64), manifest)
        values = {
            'epochs': 15, 'manifests': [manifest], 'spec': 'small', 'image_size': 64, 'batch_size': 32,
            'learning_rate': 1e-4, 'seed': 0, 'out': self.path('out'), **values,
        }
        return RunConfig(**values).validate()

    def test_intra_database_accuracy(self):
        result = run_protocol(self.config(protocol='intra-database', database='A', train_fraction=2 / 3))
        self.assertEqual(result.failed, [])
        self.assertGreaterEqual(result.reports[0].accuracy, 95)

    def test_cross_database_accuracy(self):
        result = run_protocol(self.config(train_db='A'))
        self.assertEqual(result.failed, [])
        for report in result.reports:
            self.assertGreaterEqual(report.accuracy, 80, report.test_db)
            self.assertLessEqual(report.acer, 20, report.test_db)

    def test_repeated_batch_loss_is_non_increasing_for_most_seeds(self):
        dataset = load_dataset(synth_manifest(4, ['A'], seed=1, size=32), 32, dtype='f64')
        spec = dataclasses.replace(small_spec(32), dropout_rate=0.0)
        non_increasing = 0
        for seed in range(20):
            model = seeded_model(spec, seed, dtype='f64')
            optimizer = Adam(model.named_parameters(), AdamState(learning_rate=1e-4, weight_decay=0.0))
            losses = []
            for _ in range(50):
                value, _ = loss(model, dataset.images, dataset.labels)
                backward(value)
                optimizer.step()
                losses.append(float(value.value))
            non_increasing += all(later <= earlier + 1e-9 for earlier, later in zip(losses, losses[1:]))
        self.assertGreaterEqual(non_increasing, 19)

    def test_full_gradcheck_suite(self):
        for result in run_gradcheck_suite(instances=20, seed=0, tol=1e-4):
            self.assertTrue(result.passed, f"{result.name}: {result.max_relative_error:.3e}")
