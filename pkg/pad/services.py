"""
Training, evaluation and protocol services used by the management commands
and the fold task.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field

from django.conf import settings

from .checkpoint import save_checkpoint
from .data import CrossDatabase, IntraDatabase, load_dataset, split
from .exceptions import MetricsError, ProtocolError
from .metrics import Decision, EvalReport, compute_metrics
from .network import predict, seeded_model
from .optim import TrainConfig, train_epochs
from .reports import (
    averages_by_train_db,
    write_average_csv,
    write_decisions,
    write_folds,
    write_reports_csv,
    write_reports_text,
)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'checkpoint.mvn'
TRAINING_LOG_NAME = 'training_log.csv'


def protocol_to_dict(protocol):
    kind = 'cross-database' if isinstance(protocol, CrossDatabase) else 'intra-database'
    return {'kind': kind, **dataclasses.asdict(protocol)}


def protocol_from_dict(data):
    data = dict(data)
    kind = data.pop('kind')
    if kind == 'cross-database':
        return CrossDatabase(**data)
    if kind == 'intra-database':
        return IntraDatabase(**data)
    raise ProtocolError(f"Unknown protocol kind '{kind}'")


def decision_file_name(train_db, test_db):
    return f"decisions_{train_db}_to_{test_db}.csv"


class EvaluationService:
    """Score a model on test manifests"""

    def __init__(self, model, image_size=None, dtype=None, batch_size=None, workers=None):
        self.model = model
        self.image_size = image_size or model.spec.input_size
        self.dtype = dtype or model.dtype
        self.batch_size = batch_size or settings.PAD_EVAL_BATCH_SIZE
        self.workers = workers or settings.PAD_DECODE_WORKERS

    def decisions(self, manifest):
        """
        Hard decisions for every sample of ``manifest``, in manifest order.

        Returns:
            list of Decision
        """
        dataset = load_dataset(manifest, self.image_size, self.dtype, self.workers)
        decisions = []
        for start in range(0, len(dataset), self.batch_size):
            batch = slice(start, start + self.batch_size)
            predictions = predict(self.model, dataset.images[batch])
            for sample, label, predicted, score in zip(
                dataset.samples[batch], dataset.labels[batch], predictions.classes, predictions.scores
            ):
                decisions.append(Decision(int(label), int(predicted), sample.source, float(score)))
        return decisions

    def evaluate(self, manifest, train_db, test_db=None):
        """
        Returns:
            tuple: (EvalReport, list of Decision)
        """
        decisions = self.decisions(manifest)
        report = compute_metrics(decisions, train_db=train_db, test_db=test_db or manifest.name)
        return report, decisions


class TrainingService:
    """Build and train models as a RunConfig describes"""

    def __init__(self, config):
        self.config = config
        self.spec = config.network_spec()

    def build_model(self):
        return seeded_model(self.spec, self.config.seed, self.config.dtype)

    def train(self, model, manifest):
        """
        Train ``model`` on every sample of ``manifest``.

        Returns:
            TrainingLog
        """
        counts = manifest.class_counts()
        missing = [label for label, count in counts.items() if not count]
        if missing:
            raise ProtocolError(f"training split '{manifest.name}' has no {', '.join(missing)} samples")
        dataset = load_dataset(manifest, self.spec.input_size, self.config.dtype, settings.PAD_DECODE_WORKERS)
        train_config = TrainConfig(
            epochs=self.config.epochs,
            batch_size=self.config.batch_size,
            learning_rate=self.config.learning_rate,
            weight_decay=self.config.weight_decay,
            seed=self.config.seed,
        )
        logger.info(
            f"Training on '{manifest.name}': {len(dataset)} samples ({counts}), {train_config.epochs} epoch(s)"
        )
        return train_epochs(model, dataset, train_config)

    def train_and_save(self, manifest, out_dir):
        """Train a fresh model and write its checkpoint and training log to ``out_dir``."""
        os.makedirs(out_dir, exist_ok=True)
        model = self.build_model()
        log = self.train(model, manifest)
        save_checkpoint(model, os.path.join(out_dir, CHECKPOINT_NAME), epoch=len(log), adam_state=log.adam_state)
        log.write_csv(os.path.join(out_dir, TRAINING_LOG_NAME))
        return model, log


@dataclass
class ProtocolResult:
    reports: list = field(default_factory=list)
    averages: dict = field(default_factory=dict)
    folds: list = field(default_factory=list)

    @property
    def failed(self):
        return [fold for fold in self.folds if not fold['success']]


class ProtocolService:
    """Run every fold of a protocol and write the combined reports"""

    def __init__(self, config):
        self.config = config

    def fold_dir(self, protocol):
        return os.path.join(self.config.out, f"fold_{protocol.name}")

    def run_fold(self, protocol):
        """
        Train on the fold's training split and evaluate each test split.

        Returns:
            dict: {'success': True, 'fold': name, 'reports': [...], 'epochs': n, 'final_loss': x}
        """
        manifest = self.config.load_manifest()
        fold = split(manifest, protocol).assert_disjoint()
        out_dir = self.fold_dir(protocol)
        trainer = TrainingService(self.config)
        model, log = trainer.train_and_save(fold.train, out_dir)

        evaluator = EvaluationService(model, trainer.spec.input_size, self.config.dtype)
        reports = []
        for test in fold.tests:
            report, decisions = evaluator.evaluate(test, train_db=protocol.name, test_db=test.name)
            write_decisions(decisions, os.path.join(out_dir, decision_file_name(protocol.name, test.name)))
            reports.append(dataclasses.asdict(report))
            logger.info(f"Fold {protocol.name}: {test.name} accuracy {float(report.accuracy):.2f}%")
        return {
            'success': True,
            'fold': protocol.name,
            'reports': reports,
            'epochs': len(log),
            'final_loss': log.losses[-1] if log.records else None,
        }

    def run(self):
        from .tasks import run_fold

        manifest = self.config.load_manifest()
        protocols = self.config.protocols(manifest)
        os.makedirs(self.config.out, exist_ok=True)
        result = ProtocolResult()
        for protocol in protocols:
            logger.info(f"Starting fold {protocol.name} ({len(protocols)} total)")
            outcome = run_fold.delay(self.config.to_dict(), protocol_to_dict(protocol)).get()
            result.folds.append(outcome)
            if outcome['success']:
                result.reports.extend(EvalReport(**report) for report in outcome['reports'])
                logger.info(f"Finished fold {protocol.name}")
            else:
                logger.error(f"Fold {protocol.name} failed: {outcome['error']}")

        try:
            result.averages = averages_by_train_db(result.reports)
        except MetricsError as e:
            logger.error(f"Could not average ACER: {e}")
        write_reports_csv(result.reports, os.path.join(self.config.out, 'reports.csv'))
        write_reports_text(result.reports, os.path.join(self.config.out, 'reports.txt'), result.averages)
        write_average_csv(result.averages, os.path.join(self.config.out, 'average_acer.csv'))
        write_folds(result.folds, os.path.join(self.config.out, 'folds.csv'))
        return result


def run_protocol(config):
    return ProtocolService(config).run()

