"""
Report and decision files written by the evaluation harness.
"""

import csv
import logging
from collections import OrderedDict

from .labels import label_name
from .metrics import Decision, average_acer, format_rate, full_precision

logger = logging.getLogger(__name__)

REPORT_FIELDS = ('train_db', 'test_db', 'apcer', 'bpcer', 'acer', 'accuracy', 'n_attack', 'n_bonafide')
DECISION_FIELDS = ('path', 'label', 'predicted', 'score')
AVERAGE_FIELDS = ('train_db', 'average_acer', 'n_reports')
FOLD_FIELDS = ('fold', 'status', 'error')


def _writer(handle):
    return csv.writer(handle, lineterminator='\n')


def write_reports_csv(reports, path):
    with open(path, 'w', newline='') as handle:
        writer = _writer(handle)
        writer.writerow(REPORT_FIELDS)
        for report in reports:
            writer.writerow([
                report.train_db,
                report.test_db,
                full_precision(report.apcer),
                full_precision(report.bpcer),
                full_precision(report.acer),
                full_precision(report.accuracy),
                report.n_attack,
                report.n_bonafide,
            ])


def read_reports_csv(path):
    with open(path, newline='') as handle:
        return list(csv.DictReader(handle))


def format_reports(reports, averages=None):
    """Aligned text table with rates at two decimals."""
    lines = [f"{'train':<12} {'test':<12} {'APCER':>9} {'BPCER':>9} {'ACER':>9} {'Accuracy':>9} "
             f"{'attack':>7} {'bonafide':>8}"]
    for report in reports:
        lines.append(
            f"{report.train_db:<12} {report.test_db:<12} {format_rate(report.apcer):>9} "
            f"{format_rate(report.bpcer):>9} {format_rate(report.acer):>9} {format_rate(report.accuracy):>9} "
            f"{report.n_attack:>7} {report.n_bonafide:>8}"
        )
    if averages:
        lines.append('')
        lines.append(f"{'train':<12} {'average ACER':>12}")
        for train_db, (value, _) in averages.items():
            lines.append(f"{train_db:<12} {format_rate(value):>12}")
    return '\n'.join(lines) + '\n'


def write_reports_text(reports, path, averages=None):
    with open(path, 'w') as handle:
        handle.write(format_reports(reports, averages))


def averages_by_train_db(reports):
    """train_db -> (average ACER, number of reports), in first-seen order."""
    groups = OrderedDict()
    for report in reports:
        groups.setdefault(report.train_db, []).append(report)
    return OrderedDict((train_db, (average_acer(group), len(group))) for train_db, group in groups.items())


def write_average_csv(averages, path):
    with open(path, 'w', newline='') as handle:
        writer = _writer(handle)
        writer.writerow(AVERAGE_FIELDS)
        for train_db, (value, count) in averages.items():
            writer.writerow([train_db, full_precision(value), count])


def write_decisions(decisions, path):
    with open(path, 'w', newline='') as handle:
        writer = _writer(handle)
        writer.writerow(DECISION_FIELDS)
        for decision in decisions:
            score = '' if decision.score is None else repr(float(decision.score))
            writer.writerow([decision.source, label_name(decision.label), label_name(decision.predicted), score])


def read_decisions(path):
    with open(path, newline='') as handle:
        return [
            Decision.of(row['label'], row['predicted'], row['path'], float(row['score']) if row['score'] else None)
            for row in csv.DictReader(handle)
        ]


def write_folds(folds, path):
    with open(path, 'w', newline='') as handle:
        writer = _writer(handle)
        writer.writerow(FOLD_FIELDS)
        for fold in folds:
            writer.writerow([fold['fold'], 'ok' if fold['success'] else 'failed', fold.get('error', '')])
