"""Tabular data plumbing: the ``Dataset`` container, CSV I/O, balancing and folds."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Dataset",
    "DataError",
    "FoldPlan",
    "load_csv",
    "write_csv",
    "downsample_majority",
    "make_folds",
    "split",
    "holdout_split",
    "fit_standardizer",
]


class DataError(ValueError):
    """Malformed input data; messages carry row/column positions where known."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of features, binary labels, binary protected group and weights.

    ``protected == 0`` marks the disadvantaged group. The protected column must
    also be one of the feature columns.
    """

    features: np.ndarray
    labels: np.ndarray
    protected: np.ndarray
    weights: np.ndarray | None = None
    feature_names: Sequence[str] | None = None
    protected_name: str = "z"
    label_name: str = "y"
    weight_name: str | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        n, p = X.shape
        if n < 1 or p < 1:
            raise DataError(f"need at least one row and one column, got shape {X.shape}")
        y = np.asarray(self.labels)
        z = np.asarray(self.protected)
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float)
        for name, arr in (("labels", y), ("protected", z), ("weights", w)):
            if arr.shape != (n,):
                raise DataError(f"{name} has shape {arr.shape}, expected ({n},)")
        if not np.all(np.isfinite(X)):
            r, c = np.argwhere(~np.isfinite(X))[0]
            raise DataError(f"non-finite feature at row {r + 1}, column {c + 1}")
        for name, arr in (("labels", y), ("protected", z)):
            bad = ~np.isin(arr, (0, 1))
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise DataError(f"{name} must be 0/1; row {i + 1} holds {arr[i]!r}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            i = int(np.flatnonzero(~(np.isfinite(w) & (w > 0)))[0])
            raise DataError(f"weights must be positive; row {i + 1} holds {w[i]!r}")
        names = list(self.feature_names) if self.feature_names is not None else [f"f{j}" for j in range(p)]
        if len(names) != p:
            raise DataError(f"{len(names)} feature names for {p} columns")
        if self.protected_name not in names:
            raise DataError(f"protected column {self.protected_name!r} must also be a feature column")

        object.__setattr__(self, "features", _frozen(X, float))
        object.__setattr__(self, "labels", _frozen(y, np.int64))
        object.__setattr__(self, "protected", _frozen(z, np.int64))
        object.__setattr__(self, "weights", _frozen(w, float))
        object.__setattr__(self, "feature_names", tuple(names))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def is_weighted(self) -> bool:
        return not np.all(self.weights == 1.0)

    def take(self, idx) -> "Dataset":
        """Row subset (or reordering) by integer index."""
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            protected=self.protected[idx],
            weights=self.weights[idx],
            feature_names=self.feature_names,
            protected_name=self.protected_name,
            label_name=self.label_name,
            weight_name=self.weight_name,
        )

    def with_features(self, features) -> "Dataset":
        return Dataset(
            features=features,
            labels=self.labels,
            protected=self.protected,
            weights=self.weights,
            feature_names=self.feature_names,
            protected_name=self.protected_name,
            label_name=self.label_name,
            weight_name=self.weight_name,
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.feature_names == other.feature_names
            and self.protected_name == other.protected_name
            and self.label_name == other.label_name
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.protected, other.protected)
            and np.array_equal(self.weights, other.weights)
        )


def _parse_real(cell: str, row: int, col: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"non-numeric value {cell!r} at row {row}, column {col!r}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value {cell!r} at row {row}, column {col!r}")
    return value


def load_csv(
    path,
    label_col: str,
    protected_col: str,
    weight_col: str | None = None,
    feature_cols: Sequence[str] | str = "auto",
) -> Dataset:
    """Read a header-row CSV into a :class:`Dataset`.

    Parameters
    ----------
    path : path-like
        UTF-8, comma-separated file with a header row.
    label_col, protected_col : str
        Binary columns holding the outcome and the protected group.
    weight_col : str, optional
        Positive per-row sample weights. All weights are 1.0 when omitted.
    feature_cols : list of str or "auto"
        ``"auto"`` takes every column other than the label and weight. The
        protected column is appended when missing from an explicit list.

    Raises
    ------
    DataError
        On a missing column, an empty or non-numeric cell, a label/protected
        value outside {0, 1}, or a non-positive weight. Row numbers count data
        rows from 1 (the header is row 0).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty; a header row is required") from None
        rows = [r for r in reader if r]

    if isinstance(feature_cols, str):
        if feature_cols != "auto":
            feature_cols = [c.strip() for c in feature_cols.split(",") if c.strip()]
        else:
            feature_cols = [c for c in header if c not in (label_col, weight_col)]
    feature_cols = list(feature_cols)
    if protected_col not in feature_cols:
        feature_cols.append(protected_col)
    needed = [label_col, *feature_cols] + ([weight_col] if weight_col else [])
    missing = [c for c in needed if c not in header]
    if missing:
        raise DataError(f"missing column(s) {missing} in {path}; header is {header}")
    pos = {c: header.index(c) for c in header}
    if not rows:
        raise DataError(f"{path} has a header but no data rows")

    n = len(rows)
    X = np.empty((n, len(feature_cols)))
    y = np.empty(n, dtype=np.int64)
    z = np.empty(n, dtype=np.int64)
    w = np.ones(n)
    for i, row in enumerate(rows):
        r = i + 1
        if len(row) != len(header):
            raise DataError(f"row {r} has {len(row)} cells, header has {len(header)}")
        for j, c in enumerate(feature_cols):
            X[i, j] = _parse_real(row[pos[c]], r, c)
        for col, out in ((label_col, y), (protected_col, z)):
            v = _parse_real(row[pos[col]], r, col)
            if v not in (0.0, 1.0):
                raise DataError(f"column {col!r} must be 0 or 1; row {r} holds {row[pos[col]]!r}")
            out[i] = int(v)
        if weight_col:
            v = _parse_real(row[pos[weight_col]], r, weight_col)
            if v <= 0:
                raise DataError(f"weight must be positive; row {r} holds {row[pos[weight_col]]!r}")
            w[i] = v

    return Dataset(
        features=X,
        labels=y,
        protected=z,
        weights=w,
        feature_names=feature_cols,
        protected_name=protected_col,
        label_name=label_col,
        weight_name=weight_col,
    )


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_csv(dataset: Dataset, path) -> None:
    """Write features, then the label, then the weight column when named."""
    header = list(dataset.feature_names) + [dataset.label_name]
    if dataset.weight_name:
        header.append(dataset.weight_name)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n_rows):
            row = [_fmt(v) for v in dataset.features[i]]
            row.append(str(int(dataset.labels[i])))
            if dataset.weight_name:
                row.append(_fmt(dataset.weights[i]))
            writer.writerow(row)


def downsample_majority(dataset: Dataset, ratio: float = 2.0, seed: int = 0) -> Dataset:
    """Subsample the majority outcome class to at most ``ratio`` times the minority.

    Every minority row is kept. The result is shuffled with ``seed``.
    """
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    y = dataset.labels
    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise DataError("downsampling needs both outcome classes to be present")
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    rng = np.random.default_rng(seed)
    keep = min(len(majority), int(math.floor(ratio * len(minority))))
    chosen = rng.choice(majority, size=keep, replace=False)
    idx = np.concatenate([minority, chosen])
    return dataset.take(rng.permutation(idx))


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray = field(repr=False)
    seed: int = 0

    def test_index(self, fold_index: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold_index)

    def train_index(self, fold_index: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold_index)


def make_folds(n: int, k: int, seed: int = 0, labels=None) -> FoldPlan:
    """Assign ``n`` rows to ``k`` folds whose sizes differ by at most one.

    With ``labels``, rows are shuffled within each class and dealt round-robin,
    so every fold holds near-equal counts of each class.
    """
    if k < 2 or k > n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    if labels is None:
        order = rng.permutation(n)
    else:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ValueError("labels length must equal n")
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = np.arange(n) % k
    assignments.setflags(write=False)
    return FoldPlan(k=k, assignments=assignments, seed=seed)


def split(dataset: Dataset, plan: FoldPlan, fold_index: int) -> tuple[Dataset, Dataset]:
    """Return ``(train, test)`` where ``test`` is fold ``fold_index``."""
    if len(plan.assignments) != dataset.n_rows:
        raise ValueError("fold plan does not match dataset length")
    if not 0 <= fold_index < plan.k:
        raise ValueError(f"fold_index must be in [0, {plan.k}), got {fold_index}")
    return dataset.take(plan.train_index(fold_index)), dataset.take(plan.test_index(fold_index))


def holdout_split(dataset: Dataset, fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Label-stratified random ``(train, holdout)`` split."""
    if not 0 < fraction < 1:
        raise ValueError(f"holdout fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    test = []
    for c in (0, 1):
        rows = rng.permutation(np.flatnonzero(dataset.labels == c))
        test.append(rows[: int(round(fraction * len(rows)))])
    test_idx = np.sort(np.concatenate(test))
    mask = np.ones(dataset.n_rows, dtype=bool)
    mask[test_idx] = False
    return dataset.take(np.flatnonzero(mask)), dataset.take(test_idx)


def fit_standardizer(X) -> tuple[np.ndarray, np.ndarray]:
    """Column means and scales; constant columns get scale 1."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale
