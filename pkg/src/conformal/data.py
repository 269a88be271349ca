"""Dataset model, label spaces, deterministic randomness, splits, CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

Label = Hashable


class SeededRng:
    """Deterministic pseudo-random stream.

    Backed by the PCG64 generator under a 64-bit unsigned seed, so the same
    seed produces the same draws on every platform.  A stream is single-owner:
    share work across threads by creating independent streams from distinct
    seeds.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def uniform(self, count: int) -> np.ndarray:
        """Return ``count`` draws from the uniform distribution on [0, 1)."""
        if count < 0:
            raise ValueError("count must be nonnegative")
        return self._gen.random(int(count))

    def permutation(self, n: int) -> np.ndarray:
        """Return a random permutation of ``range(n)``."""
        return self._gen.permutation(int(n))


def tau_stream(rng: SeededRng, count: int) -> np.ndarray:
    """Tie-breaking values for smoothed p-values, each in [0, 1]."""
    return rng.uniform(count)


class Bag:
    """Multiset of examples: an observation matrix plus labels.

    ``label_space`` is the ordered finite set of admissible class symbols; it
    is empty for regression bags, whose labels are finite reals.  Insertion
    order is stored only to keep smoothing and reporting reproducible --
    every predictor output is invariant under permutation of the bag.
    Bags are immutable after construction and safe to share across threads.
    """

    __slots__ = ("x", "y", "label_space")

    def __init__(self, x, y, label_space: Sequence[Label] = ()):
        x = np.array(x, dtype=float)
        if x.ndim != 2:
            raise ValueError("observations must form a 2-d array of shape (n, d)")
        if x.size and not np.all(np.isfinite(x)):
            raise ValueError("all feature entries must be finite reals")
        label_space = tuple(label_space)
        y = tuple(y)
        if len(y) != x.shape[0]:
            raise ValueError(f"{x.shape[0]} observations but {len(y)} labels")
        if label_space:
            known = set(label_space)
            for lbl in y:
                if lbl not in known:
                    raise ValueError(f"label {lbl!r} is not in the label space")
        else:
            y = tuple(float(v) for v in y)
            if y and not all(math.isfinite(v) for v in y):
                raise ValueError("regression labels must be finite reals")
        x.setflags(write=False)
        self.x = x
        self.y = y
        self.label_space = label_space

    @classmethod
    def classification(cls, x, y, label_space: Sequence[Label] | None = None) -> "Bag":
        """Classification bag; the label space defaults to the sorted distinct labels."""
        y = tuple(y)
        if label_space is None:
            label_space = tuple(sorted(set(y)))
        if not label_space:
            raise ValueError("a classification bag needs a nonempty label space")
        return cls(x, y, label_space)

    @classmethod
    def regression(cls, x, y) -> "Bag":
        """Regression bag: labels are finite reals, label space empty."""
        return cls(x, y, ())

    @property
    def is_classification(self) -> bool:
        return bool(self.label_space)

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, indices) -> "Bag":
        indices = np.asarray(indices, dtype=int)
        return Bag(self.x[indices], tuple(self.y[i] for i in indices), self.label_space)

    def append(self, other: "Bag") -> "Bag":
        """New bag with this bag's examples followed by ``other``'s.

        Label spaces are merged (sorted) so a stream may introduce labels.
        """
        if self.is_classification != other.is_classification and (self.y or other.y):
            raise ValueError("cannot mix classification and regression bags")
        if self.n_features != other.n_features:
            raise ValueError("feature arity mismatch")
        space = tuple(sorted(set(self.label_space) | set(other.label_space)))
        return Bag(np.vstack([self.x, other.x]), self.y + other.y, space)


@dataclass(frozen=True)
class SplitSpec:
    """Seeded shuffle split: the first part gets ``ceil(n * train_fraction)`` examples."""

    train_fraction: float
    shuffle_seed: int


def split(bag: Bag, spec: SplitSpec) -> tuple[Bag, Bag]:
    """Partition a bag into (training, held-out) parts, deterministically."""
    if len(bag) == 0:
        raise ValueError("cannot split an empty bag")
    if not 0.0 < spec.train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    perm = SeededRng(spec.shuffle_seed).permutation(len(bag))
    cut = math.ceil(len(bag) * spec.train_fraction)
    return bag.subset(perm[:cut]), bag.subset(perm[cut:])


def load_csv(path, label_column, label_kind: str = "class") -> Bag:
    """Load a bag from an RFC-4180-style CSV file with a header row.

    Parameters
    ----------
    path : str or path-like
        File to read; comma delimiter, ``.`` decimal point.
    label_column : str or int
        Header name or zero-based index of the label column.
    label_kind : {"class", "real"}
        "class" keeps labels as symbols and builds the label space from the
        sorted distinct values; "real" parses them as floats and leaves the
        label space empty.
    """
    if label_kind not in ("class", "real"):
        raise ValueError('label_kind must be "class" or "real"')
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, data = rows[0], rows[1:]
    if not data:
        raise ValueError(f"{path}: no data rows")
    if isinstance(label_column, int):
        if not 0 <= label_column < len(header):
            raise ValueError(f"label column index {label_column} out of range for {len(header)} columns")
        label_idx = label_column
    else:
        try:
            label_idx = header.index(label_column)
        except ValueError:
            raise ValueError(f"unknown label column {label_column!r}; header is {header}") from None

    feats: list[list[float]] = []
    labels: list[str] = []
    for r, row in enumerate(data, start=1):
        if len(row) != len(header):
            raise ValueError(f"row {r}: expected {len(header)} cells, got {len(row)}")
        vec = []
        for c, cell in enumerate(row):
            if c == label_idx:
                continue
            try:
                val = float(cell)
            except ValueError:
                raise ValueError(f"row {r}, column {header[c]!r}: {cell!r} is not a number") from None
            if not math.isfinite(val):
                raise ValueError(f"row {r}, column {header[c]!r}: non-finite value")
            vec.append(val)
        feats.append(vec)
        labels.append(row[label_idx])

    x = np.asarray(feats, dtype=float)
    if label_kind == "real":
        parsed = []
        for r, cell in enumerate(labels, start=1):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise ValueError(
                    f"row {r}, column {header[label_idx]!r}: {cell!r} is not a number"
                ) from None
        return Bag.regression(x, parsed)
    return Bag.classification(x, labels)


def save_csv(bag: Bag, path, label_column: str = "label") -> None:
    """Write a bag as CSV (features ``x0..x{d-1}``, label column last).

    Round-trips exactly through :func:`load_csv` for bags with string class
    labels or regression labels.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(bag.n_features)] + [label_column])
        for row, lbl in zip(bag.x, bag.y):
            cells = [repr(float(v)) for v in row]
            cells.append(lbl if bag.is_classification else repr(float(lbl)))
            writer.writerow(cells)
