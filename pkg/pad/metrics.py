"""
ISO/IEC 30107-3 style PAD error rates from hard decisions.

Rates are exact fractions (percent); a rate whose class is absent from the
test set is undefined and represented by None. Human-readable output rounds
half-to-even at two decimals.
"""

import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction

from .exceptions import MetricsError
from .labels import ATTACK, BONAFIDE, CLASS_NAMES, label_index

logger = logging.getLogger(__name__)

UNDEFINED = 'undefined'
HUNDRED = Fraction(100)


@dataclass(frozen=True)
class Decision:
    """One classified sample. ``label`` and ``predicted`` are class indices."""

    label: int
    predicted: int
    source: str = ''
    score: float = None

    @classmethod
    def of(cls, label, predicted, source='', score=None):
        return cls(_as_index(label), _as_index(predicted), source, score)

    @property
    def correct(self):
        return self.label == self.predicted


def _as_index(value):
    if isinstance(value, str):
        if value not in CLASS_NAMES:
            raise MetricsError(f"Unknown class '{value}'")
        return label_index(value)
    value = int(value)
    if value not in (BONAFIDE, ATTACK):
        raise MetricsError(f"Unknown class index {value}")
    return value


def acer(apcer, bpcer):
    if apcer is None or bpcer is None:
        return None
    return (Fraction(apcer) + Fraction(bpcer)) / 2


@dataclass(frozen=True)
class EvalReport:
    train_db: str
    test_db: str
    n_attack: int
    n_bonafide: int
    attack_as_bonafide: int
    bonafide_as_attack: int

    @property
    def total(self):
        return self.n_attack + self.n_bonafide

    @property
    def apcer(self):
        if not self.n_attack:
            return None
        return HUNDRED * self.attack_as_bonafide / self.n_attack

    @property
    def bpcer(self):
        if not self.n_bonafide:
            return None
        return HUNDRED * self.bonafide_as_attack / self.n_bonafide

    @property
    def acer(self):
        return acer(self.apcer, self.bpcer)

    @property
    def accuracy(self):
        correct = self.total - self.attack_as_bonafide - self.bonafide_as_attack
        return HUNDRED * correct / self.total


def compute_metrics(decisions, train_db='', test_db=''):
    """
    Count errors per class over ``decisions``.

    Args:
        decisions: Decision objects or (label, predicted) pairs, labels given as
            class names or indices

    Returns:
        EvalReport
    """
    counts = {ATTACK: 0, BONAFIDE: 0}
    errors = {ATTACK: 0, BONAFIDE: 0}
    for decision in decisions:
        if not isinstance(decision, Decision):
            decision = Decision.of(*decision)
        counts[decision.label] += 1
        if not decision.correct:
            errors[decision.label] += 1
    if not counts[ATTACK] and not counts[BONAFIDE]:
        raise MetricsError("No decisions to score")
    return EvalReport(
        train_db=train_db,
        test_db=test_db,
        n_attack=counts[ATTACK],
        n_bonafide=counts[BONAFIDE],
        attack_as_bonafide=errors[ATTACK],
        bonafide_as_attack=errors[BONAFIDE],
    )


def mean_rate(rates):
    rates = [Fraction(rate) for rate in rates]
    if not rates:
        raise MetricsError("Cannot average an empty set of rates")
    return sum(rates, Fraction(0)) / len(rates)


def average_acer(reports):
    """Arithmetic mean of the defined ACERs of ``reports``."""
    reports = list(reports)
    if not reports:
        raise MetricsError("average_acer needs at least one report")
    defined = [report.acer for report in reports if report.acer is not None]
    if not defined:
        raise MetricsError("None of the reports has a defined ACER")
    return mean_rate(defined)


def to_decimal(rate):
    rate = Fraction(rate)
    return Decimal(rate.numerator) / Decimal(rate.denominator)


def format_rate(rate, places=2):
    """Rate as text rounded half-to-even, e.g. 7.265 -> '7.26'; None -> 'undefined'."""
    if rate is None:
        return UNDEFINED
    return str(to_decimal(rate).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_EVEN))


def full_precision(rate):
    """Rate for CSV files: the shortest float text that reads back to the same value."""
    if rate is None:
        return UNDEFINED
    return repr(float(rate))
