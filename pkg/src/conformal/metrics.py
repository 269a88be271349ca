"""Validity and efficiency metrics shared by the predictors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping


def check_epsilons(epsilons) -> tuple[float, ...]:
    """Validate a strictly increasing sequence of significance levels in (0, 1)."""
    eps = tuple(float(e) for e in epsilons)
    if not eps:
        raise ValueError("need at least one significance level")
    for e in eps:
        if not 0.0 < e < 1.0:
            raise ValueError(f"significance level {e} is outside (0, 1)")
    if any(b <= a for a, b in zip(eps, eps[1:])):
        raise ValueError("significance levels must be strictly increasing")
    return eps


@dataclass(frozen=True)
class EpsilonStats:
    """Error and efficiency figures at one significance level."""

    err_rate: float
    n_criterion: float
    singleton_rate: float
    empty_rate: float


@dataclass(frozen=True)
class ValidityReport:
    """Per-significance-level error and efficiency over a test set.

    An empty prediction set counts as an error (the true label is excluded
    by definition).
    """

    per_epsilon: Mapping[float, EpsilonStats]
    trials: int


def validity_report(prediction_sets, true_labels, epsilons) -> ValidityReport:
    """Error rate, mean set size, singleton rate and empty rate per level."""
    if len(prediction_sets) != len(true_labels):
        raise ValueError(
            f"{len(prediction_sets)} prediction sets but {len(true_labels)} labels"
        )
    n = len(prediction_sets)
    if n == 0:
        raise ValueError("empty test set")
    per = {}
    for eps in epsilons:
        errs = sizes = singles = empties = 0
        for pred, truth in zip(prediction_sets, true_labels):
            labels = pred.labels_at(eps)
            errs += truth not in labels
            sizes += len(labels)
            singles += len(labels) == 1
            empties += len(labels) == 0
        per[eps] = EpsilonStats(errs / n, sizes / n, singles / n, empties / n)
    return ValidityReport(per, n)


@dataclass(frozen=True)
class IntervalStats:
    """Regression-interval figures at one significance level."""

    miss_rate: float
    mean_width: float


@dataclass(frozen=True)
class IntervalReport:
    """Per-significance-level miss rate and mean finite interval width."""

    per_epsilon: Mapping[float, IntervalStats]
    trials: int


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts for binary abstention classifiers; rejections split by true class."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    rp: int = 0
    rn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn, self.rp, self.rn) < 0:
            raise ValueError("confusion counts must be nonnegative")


def confusion_metrics(cm: ConfusionMatrix) -> dict[str, float | None]:
    """Accuracy, precision, TPr, FPr and rejection rate.

    A zero denominator yields ``None`` rather than an error or a NaN.
    """

    def rate(num: int, den: int) -> float | None:
        return num / den if den else None

    decided = cm.tp + cm.tn + cm.fp + cm.fn
    return {
        "accuracy": rate(cm.tp + cm.tn, decided),
        "precision": rate(cm.tp, cm.tp + cm.fp),
        "tpr": rate(cm.tp, cm.tp + cm.fn),
        "fpr": rate(cm.fp, cm.fp + cm.tn),
        "rejection": rate(cm.rp + cm.rn, cm.rp + cm.rn + decided),
    }
