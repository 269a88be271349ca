"""Venn multi-probabilistic predictor over pluggable taxonomies.

For each candidate label the hypothetical example is assigned to a category
and the empirical label distribution inside that category (hypothetical
example included) becomes one matrix row.  The column with the best
worst-case entry names the prediction; its complement spans the error
probability interval.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from typing import Hashable

import numpy as np

from .data import Bag, Label
from .ncm import KnnConfig, _pairwise_sq_dists


class VennTaxonomy(ABC):
    """Deterministic, total assignment of examples to category symbols.

    ``contains_x`` says whether the observation was part of the training
    bag, so a taxonomy can exclude an example from its own neighbourhood.
    """

    @abstractmethod
    def train(self, bag: Bag) -> None:
        """Fit the underlying algorithm to the bag."""

    @abstractmethod
    def category(self, x: np.ndarray, y: Label, contains_x: bool) -> Hashable:
        """Category of the example (x, y)."""


class NearestNeighborTaxonomy(VennTaxonomy):
    """Category = label of the nearest training observation.

    With ``contains_x`` the observation's own zero-distance occurrence is
    excluded, so a training point maps to the label of its nearest *other*
    neighbour.  Distance ties break by ascending bag index.  Degenerate bags
    (empty, or a singleton equal to x) fall back to the hypothesis label so
    the mapping stays total.
    """

    def __init__(self, config: KnnConfig | None = None):
        config = config or KnnConfig(k=1)
        if config.k != 1:
            raise ValueError("the nearest-neighbour taxonomy uses exactly one neighbour")
        self.config = config
        self._bag: Bag | None = None

    def train(self, bag: Bag) -> None:
        self._bag = bag

    def category(self, x: np.ndarray, y: Label, contains_x: bool) -> Hashable:
        if self._bag is None:
            raise ValueError("taxonomy is not trained")
        if len(self._bag) == 0:
            return y
        sq = _pairwise_sq_dists(np.asarray(x, dtype=float)[None, :], self._bag.x)[0]
        if contains_x:
            zero = np.flatnonzero(sq == 0)
            if zero.size:
                sq = sq.copy()
                sq[zero[0]] = np.inf
            if not np.isfinite(sq).any():
                return y
        return self._bag.y[int(np.argmin(sq))]


@dataclass(frozen=True)
class VennMatrix:
    """Per-hypothesis empirical label distributions; every row sums to 1."""

    rows: np.ndarray
    labels: tuple[Label, ...]


@dataclass(frozen=True)
class ProbabilityInterval:
    low: float
    high: float

    def __post_init__(self):
        if not 0.0 <= self.low <= self.high <= 1.0:
            raise ValueError("probability interval must satisfy 0 <= low <= high <= 1")

    @property
    def width(self) -> float:
        return self.high - self.low


@dataclass(frozen=True)
class VennReport:
    """Accuracy of the label predictions plus mean error-interval geometry."""

    accuracy: float
    mean_error_low: float
    mean_error_high: float
    mean_interval_width: float
    trials: int


class VennPredictor:
    """Multi-probabilistic predictor with per-prediction error intervals.

    A trained instance is immutable; ``predict`` is safe to call
    concurrently.  ``train`` and ``score_online`` need exclusive access.
    """

    def __init__(self, taxonomy: VennTaxonomy):
        self.taxonomy = taxonomy
        self._bag: Bag | None = None
        self._categories: list[Hashable] | None = None

    @property
    def bag(self) -> Bag | None:
        return self._bag

    def train(self, bag: Bag, override: bool = False) -> "VennPredictor":
        """Fit the taxonomy and cache each bag example's category."""
        merged = bag if (override or self._bag is None) else self._bag.append(bag)
        if not merged.label_space:
            raise ValueError("the Venn predictor needs a classification bag")
        if len(merged.label_space) < 2:
            raise ValueError("the label space must hold at least two labels")
        self.taxonomy.train(merged)
        self._bag = merged
        self._categories = [
            self.taxonomy.category(x, y, True) for x, y in zip(merged.x, merged.y)
        ]
        return self

    def matrix(self, x) -> VennMatrix:
        """Label distribution per hypothesis for one observation.

        Row r: assign (x, label_r) to its category, then count labels over
        the bag examples sharing that category together with the
        hypothetical example itself (so every denominator is at least one).
        """
        bag = self._require_trained()
        x = np.asarray(x, dtype=float)
        labels = bag.label_space
        contains = bool(len(bag)) and bool(np.any(np.all(bag.x == x, axis=1)))
        rows = np.empty((len(labels), len(labels)))
        for r, hypothesis in enumerate(labels):
            cat = self.taxonomy.category(x, hypothesis, contains)
            counts = Counter(
                y for y, c in zip(bag.y, self._categories) if c == cat
            )
            counts[hypothesis] += 1
            total = sum(counts.values())
            rows[r] = [counts[lbl] / total for lbl in labels]
        return VennMatrix(rows, labels)

    def predict(self, X, proba: bool = True):
        """Predicted labels, optionally with error probability intervals.

        The best column maximizes the minimum entry (ties to the earlier
        label); its label is the prediction and its value range, reflected
        around 1, the error interval.
        """
        bag = self._require_trained()
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != bag.n_features:
            raise ValueError(f"observations must form a matrix with {bag.n_features} columns")
        predictions: list[Label] = []
        intervals: list[ProbabilityInterval] = []
        for x in X:
            matrix = self.matrix(x)
            qualities = matrix.rows.min(axis=0)
            best = int(qualities.argmax())
            column = matrix.rows[:, best]
            predictions.append(bag.label_space[best])
            intervals.append(
                ProbabilityInterval(1.0 - float(column.max()), 1.0 - float(column.min()))
            )
        return (predictions, intervals) if proba else predictions

    def score(self, test: Bag) -> VennReport:
        """Accuracy and mean error-interval geometry over a test bag."""
        self._require_trained()
        if len(test) == 0:
            raise ValueError("empty test bag")
        predictions, intervals = self.predict(test.x, proba=True)
        return _venn_report(predictions, intervals, test.y)

    def score_online(self, stream: Bag) -> VennReport:
        """Predict each stream element, record the outcome, then absorb it."""
        self._require_trained()
        if len(stream) == 0:
            return VennReport(0.0, 0.0, 0.0, 0.0, 0)
        predictions: list[Label] = []
        intervals: list[ProbabilityInterval] = []
        for i in range(len(stream)):
            x, y = stream.x[i], stream.y[i]
            pred, interval = self.predict(x[None, :], proba=True)
            predictions.append(pred[0])
            intervals.append(interval[0])
            self.train(Bag.classification(x[None, :], (y,), self._bag.label_space))
        return _venn_report(predictions, intervals, stream.y)

    def _require_trained(self) -> Bag:
        if self._bag is None:
            raise ValueError("predictor is not trained")
        return self._bag


def _venn_report(predictions, intervals, truths) -> VennReport:
    n = len(predictions)
    accuracy = sum(p == t for p, t in zip(predictions, truths)) / n
    low = sum(i.low for i in intervals) / n
    high = sum(i.high for i in intervals) / n
    width = sum(i.width for i in intervals) / n
    return VennReport(accuracy, low, high, width, n)
