"""Group confusion tallies and equality-of-opportunity metrics.

All gaps are signed as ``rate(group 0) - rate(group 1)``, with group 0 the
disadvantaged group. A positive FNR gap means the disadvantaged group's true
positives are missed more often.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "UndefinedMetricError",
    "GroupConfusion",
    "FairnessReport",
    "group_confusion",
    "group_fnr",
    "group_fpr",
    "group_f1",
    "group_accuracy",
    "fnr_gap",
    "fpr_gap",
    "f1_gap",
    "weighted_accuracy",
    "report_from_predictions",
    "audit",
]


class UndefinedMetricError(ZeroDivisionError):
    def __init__(self, metric: str, group: int):
        super().__init__(f"{metric} is undefined for group z={group}: zero denominator")
        self.metric = metric
        self.group = group


@dataclass(frozen=True)
class GroupConfusion:
    """(Weighted) confusion tallies; index 0/1 selects the protected group."""

    tp: tuple[float, float]
    fp: tuple[float, float]
    tn: tuple[float, float]
    fn: tuple[float, float]

    def total(self) -> float:
        return float(sum(self.tp) + sum(self.fp) + sum(self.tn) + sum(self.fn))

    def swapped(self) -> "GroupConfusion":
        return GroupConfusion(self.tp[::-1], self.fp[::-1], self.tn[::-1], self.fn[::-1])

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}


def _binary(name, a):
    a = np.asarray(a)
    if not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    return a.astype(bool)


def group_confusion(y_true, y_pred, protected, sample_weight=None) -> GroupConfusion:
    y = _binary("y_true", y_true)
    yh = _binary("y_pred", y_pred)
    z = _binary("protected", protected)
    n = y.shape[0]
    if yh.shape != (n,) or z.shape != (n,):
        raise ValueError(f"length mismatch: y_true {y.shape}, y_pred {yh.shape}, protected {z.shape}")
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"sample_weight has shape {w.shape}, expected ({n},)")
    if np.any(w <= 0):
        raise ValueError("sample weights must be positive")

    def tally(cond):
        return (float(w[cond & ~z].sum()), float(w[cond & z].sum()))

    return GroupConfusion(tp=tally(y & yh), fp=tally(~y & yh), tn=tally(~y & ~yh), fn=tally(y & ~yh))


def _ratio(num, den, metric, group):
    if den == 0:
        raise UndefinedMetricError(metric, group)
    return num / den


def group_fnr(c: GroupConfusion, g: int) -> float:
    return _ratio(c.fn[g], c.tp[g] + c.fn[g], "FNR", g)


def group_fpr(c: GroupConfusion, g: int) -> float:
    return _ratio(c.fp[g], c.tn[g] + c.fp[g], "FPR", g)


def group_f1(c: GroupConfusion, g: int) -> float:
    return _ratio(c.tp[g], c.tp[g] + 0.5 * (c.fp[g] + c.fn[g]), "F1", g)


def group_accuracy(c: GroupConfusion, g: int) -> float:
    return _ratio(c.tp[g] + c.tn[g], c.tp[g] + c.tn[g] + c.fp[g] + c.fn[g], "accuracy", g)


def fnr_gap(c: GroupConfusion) -> float:
    return group_fnr(c, 0) - group_fnr(c, 1)


def fpr_gap(c: GroupConfusion) -> float:
    return group_fpr(c, 0) - group_fpr(c, 1)


def f1_gap(c: GroupConfusion) -> float:
    return group_f1(c, 0) - group_f1(c, 1)


def weighted_accuracy(y_true, y_pred, sample_weight=None) -> float:
    """Share of (weighted) rows where the prediction equals the label."""
    y = np.asarray(y_true)
    yh = np.asarray(y_pred)
    if y.shape != yh.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yh.shape}")
    w = np.ones(y.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    total = w.sum()
    if not total > 0:
        raise ValueError("total weight must be positive")
    return float(w[y == yh].sum() / total)


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


@dataclass
class FairnessReport:
    """Fairness gaps, weighted accuracy and per-group rates.

    Metrics with an empty denominator are ``None`` rather than 0.
    """

    fnr_gap: float | None
    fpr_gap: float | None
    f1_gap: float | None
    weighted_accuracy: float
    group_fnr: list = field(default_factory=list)
    group_fpr: list = field(default_factory=list)
    group_f1: list = field(default_factory=list)
    group_accuracy: list = field(default_factory=list)
    counts: GroupConfusion | None = None
    threshold: float = 0.5

    METRICS = ("fnr_gap", "fpr_gap", "f1_gap", "weighted_accuracy")

    @property
    def abs_fnr_gap(self):
        return None if self.fnr_gap is None else abs(self.fnr_gap)

    @property
    def abs_fpr_gap(self):
        return None if self.fpr_gap is None else abs(self.fpr_gap)

    @property
    def abs_f1_gap(self):
        return None if self.f1_gap is None else abs(self.f1_gap)

    def to_dict(self) -> dict:
        d = {
            "fnr_gap": self.fnr_gap,
            "fpr_gap": self.fpr_gap,
            "f1_gap": self.f1_gap,
            "abs_fnr_gap": self.abs_fnr_gap,
            "abs_fpr_gap": self.abs_fpr_gap,
            "abs_f1_gap": self.abs_f1_gap,
            "weighted_accuracy": self.weighted_accuracy,
            "group_fnr": list(self.group_fnr),
            "group_fpr": list(self.group_fpr),
            "group_f1": list(self.group_f1),
            "group_accuracy": list(self.group_accuracy),
            "threshold": self.threshold,
        }
        if self.counts is not None:
            d["counts"] = self.counts.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FairnessReport":
        counts = d.get("counts")
        return cls(
            fnr_gap=d["fnr_gap"],
            fpr_gap=d["fpr_gap"],
            f1_gap=d["f1_gap"],
            weighted_accuracy=d["weighted_accuracy"],
            group_fnr=list(d.get("group_fnr", [])),
            group_fpr=list(d.get("group_fpr", [])),
            group_f1=list(d.get("group_f1", [])),
            group_accuracy=list(d.get("group_accuracy", [])),
            counts=None if counts is None else GroupConfusion(**{k: tuple(v) for k, v in counts.items()}),
            threshold=d.get("threshold", 0.5),
        )

    def to_row(self) -> dict:
        """Flat mapping with one column per scalar metric."""
        row = {
            "fnr_gap": self.fnr_gap,
            "fpr_gap": self.fpr_gap,
            "f1_gap": self.f1_gap,
            "abs_fnr_gap": self.abs_fnr_gap,
            "abs_fpr_gap": self.abs_fpr_gap,
            "abs_f1_gap": self.abs_f1_gap,
            "weighted_accuracy": self.weighted_accuracy,
        }
        for name in ("fnr", "fpr", "f1", "accuracy"):
            values = getattr(self, f"group_{name}")
            for g in (0, 1):
                row[f"{name}_z{g}"] = values[g] if len(values) > g else None
        return row


def report_from_predictions(y_true, y_pred, protected, sample_weight=None, threshold=0.5) -> FairnessReport:
    c = group_confusion(y_true, y_pred, protected, sample_weight)
    return FairnessReport(
        fnr_gap=_maybe(fnr_gap, c),
        fpr_gap=_maybe(fpr_gap, c),
        f1_gap=_maybe(f1_gap, c),
        weighted_accuracy=weighted_accuracy(y_true, y_pred, sample_weight),
        group_fnr=[_maybe(group_fnr, c, g) for g in (0, 1)],
        group_fpr=[_maybe(group_fpr, c, g) for g in (0, 1)],
        group_f1=[_maybe(group_f1, c, g) for g in (0, 1)],
        group_accuracy=[_maybe(group_accuracy, c, g) for g in (0, 1)],
        counts=c,
        threshold=threshold,
    )


def audit(model, dataset, threshold: float = 0.5, spec=None) -> FairnessReport:
    """Score ``dataset`` with ``model`` in eval mode and report every metric.

    ``model`` is a fitted estimator exposing ``predict_proba`` or, together
    with ``spec``, a raw :class:`~fairgap.models.ModelState`.
    """
    if spec is not None:
        from .models import forward

        p, _ = forward(model, spec, dataset.features)
    else:
        p = model.predict_proba(dataset.features)[:, 1]
    y_pred = (p >= threshold).astype(np.int64)
    return report_from_predictions(dataset.labels, y_pred, dataset.protected, dataset.weights, threshold)


def nan_if_none(v):
    return math.nan if v is None else v
