"""Cross-validated experiment cells, parameter sweeps and result files.

A *cell* is one experiment configuration evaluated over
``datasets x trials x folds`` runs. A *sweep* varies one axis of a base
configuration and runs one cell per value.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import FairClassifier
from .fairness import FairnessReport, audit
from .mitigation import MitigationConfig
from .models import DivergenceError, ModelSpec, TrainConfig
from .synthgen import SyntheticConfig, cov_zx_to_cov_ax, generate_dataset
from .tabular import Dataset, downsample_majority, load_csv, make_folds, split

__all__ = [
    "Axis",
    "CsvSource",
    "ExperimentConfig",
    "UnsupportedAxisError",
    "CellResult",
    "SweepResult",
    "run_cell",
    "sweep",
    "aggregate",
    "summarize",
    "config_hash",
    "FULL_SCALE_SAMPLE_SIZE",
]

logger = logging.getLogger(__name__)

FULL_SCALE_SAMPLE_SIZE = 1_000_000
SUMMARY_METRICS = ("fnr_gap", "fpr_gap", "f1_gap", "abs_fnr_gap", "abs_fpr_gap", "abs_f1_gap", "weighted_accuracy")
TRACE_COLUMNS = (
    "epoch",
    "primary_loss",
    "fairness_loss",
    "total_loss",
    "test_primary_loss",
    "test_fairness_loss",
    "test_total_loss",
)


class UnsupportedAxisError(ValueError):
    """Raised when a sweep axis does not apply to the data source."""


class Axis(str, enum.Enum):
    COV_ZX = "cov_zx"
    NUM_PREDICTORS = "n_predictors"
    SAMPLE_SIZE = "sample_size"
    LAMBDA = "lambda"


@dataclass(frozen=True)
class CsvSource:
    """Schema of a user-supplied CSV file."""

    path: str
    label_col: str
    protected_col: str
    weight_col: str | None = None
    feature_cols: tuple | str = "auto"

    def load(self) -> Dataset:
        return load_csv(self.path, self.label_col, self.protected_col, self.weight_col, self.feature_cols)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if not isinstance(self.feature_cols, str):
            d["feature_cols"] = list(self.feature_cols)
        return d


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one cell.

    Parameters
    ----------
    source : SyntheticConfig or CsvSource
    model : ModelSpec
    training : TrainConfig
        ``training.seed`` is ignored; per-run seeds come from ``base_seed``.
    mitigation : MitigationConfig or None
        ``None`` bypasses the mitigation module entirely.
    trials, folds : int
        Repetitions of k-fold cross-validation.
    datasets : int, optional
        Independent datasets per cell; defaults to 3 for synthetic sources and
        1 for CSV files.
    standardize : bool, optional
        Defaults to True for CSV sources and False for synthetic ones.
    downsample_ratio : float, optional
        Majority-to-minority cap applied to the whole dataset before folding.
    """

    source: SyntheticConfig | CsvSource = field(default_factory=SyntheticConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    training: TrainConfig = field(default_factory=TrainConfig)
    mitigation: MitigationConfig | None = field(default_factory=MitigationConfig)
    trials: int = 5
    folds: int = 5
    datasets: int | None = None
    base_seed: int = 0
    standardize: bool | None = None
    downsample_ratio: float | None = None
    threshold: float = 0.5

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.datasets is not None and self.datasets < 1:
            raise ValueError("datasets must be at least 1")
        if self.base_seed < 0:
            raise ValueError("base_seed must be non-negative")

    @property
    def is_synthetic(self) -> bool:
        return isinstance(self.source, SyntheticConfig)

    @property
    def n_datasets(self) -> int:
        if self.datasets is not None:
            return self.datasets
        return 3 if self.is_synthetic else 1

    @property
    def use_standardize(self) -> bool:
        return (not self.is_synthetic) if self.standardize is None else self.standardize

    def to_dict(self) -> dict:
        if self.is_synthetic:
            src = {"kind": "synthetic", **dataclasses.asdict(self.source)}
            src["scenario"] = self.source.scenario.value
        else:
            src = {"kind": "csv", **self.source.to_dict()}
        train = dataclasses.asdict(self.training)
        train.pop("seed")
        return {
            "source": src,
            "model": self.model.to_dict(),
            "training": train,
            "mitigation": None if self.mitigation is None else dataclasses.asdict(self.mitigation),
            "trials": self.trials,
            "folds": self.folds,
            "datasets": self.n_datasets,
            "base_seed": self.base_seed,
            "standardize": self.use_standardize,
            "downsample_ratio": self.downsample_ratio,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        src = dict(d["source"])
        kind = src.pop("kind", "synthetic")
        if kind == "synthetic":
            source = SyntheticConfig(**src)
        else:
            fc = src.get("feature_cols", "auto")
            src["feature_cols"] = fc if isinstance(fc, str) else tuple(fc)
            source = CsvSource(**src)
        mit = d.get("mitigation", {})
        return cls(
            source=source,
            model=ModelSpec(**d.get("model", {})),
            training=TrainConfig(**d.get("training", {})),
            mitigation=None if mit is None else MitigationConfig(**mit),
            trials=d.get("trials", 5),
            folds=d.get("folds", 5),
            datasets=d.get("datasets"),
            base_seed=d.get("base_seed", 0),
            standardize=d.get("standardize"),
            downsample_ratio=d.get("downsample_ratio"),
            threshold=d.get("threshold", 0.5),
        )

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(doc: dict) -> str:
    """SHA-256 of the canonical JSON form of ``doc``."""
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------- seeds


def dataset_seed(base_seed: int, dataset_idx: int) -> int:
    # depends on (base_seed, dataset_idx) only, so all cells of a sweep see the same draws
    return int(np.random.SeedSequence([base_seed, dataset_idx]).generate_state(1, np.uint32)[0])


def fold_seed(base_seed: int, dataset_idx: int, trial: int) -> int:
    return int(np.random.SeedSequence([base_seed, dataset_idx, trial, 0xF01D]).generate_state(1, np.uint32)[0])


def run_seed(base_seed: int, dataset_idx: int, trial: int, fold: int) -> tuple:
    """Entropy for the training stream of one run: the index tuple itself."""
    return (base_seed, dataset_idx, trial, fold)


# ---------------------------------------------------------------- cells


def _load_datasets(cfg: ExperimentConfig) -> list[Dataset]:
    out = []
    for d in range(cfg.n_datasets):
        if cfg.is_synthetic:
            src = dataclasses.replace(cfg.source, seed=dataset_seed(cfg.base_seed, d))
            ds = generate_dataset(src)
        else:
            ds = cfg.source.load()
        if cfg.downsample_ratio is not None:
            ds = downsample_majority(ds, cfg.downsample_ratio, seed=dataset_seed(cfg.base_seed, d))
        out.append(ds)
    return out


def make_estimator(cfg: ExperimentConfig, seed) -> FairClassifier:
    m = cfg.mitigation if cfg.mitigation is not None else MitigationConfig()
    return FairClassifier(
        model=cfg.model.kind.value,
        hidden_layers=cfg.model.hidden_layers,
        hidden_width=cfg.model.hidden_width,
        dropout_rate=cfg.model.dropout_rate,
        init=cfg.model.init.value,
        lam=m.lam,
        target_class=m.q,
        weighted=m.weighted,
        reduction=m.reduction,
        epsilon=m.epsilon,
        batch_size=cfg.training.batch_size,
        step_size=cfg.training.step_size,
        epochs=cfg.training.epochs,
        select_on=cfg.training.select_on,
        dtype=cfg.training.dtype,
        standardize=cfg.use_standardize,
        threshold=cfg.threshold,
        random_state=seed,
        mitigate=cfg.mitigation is not None,
    )


def _run_one(cfg: ExperimentConfig, ds: Dataset, d: int, t: int, f: int, plan, chash: str) -> dict:
    seed = run_seed(cfg.base_seed, d, t, f)
    train_ds, test_ds = split(ds, plan, f)
    record = {
        "run_id": f"d{d}_t{t}_f{f}",
        "dataset_idx": d,
        "trial": t,
        "fold": f,
        "seed": list(seed),
        "config_hash": chash,
        "n_train": train_ds.n_rows,
        "n_test": test_ds.n_rows,
    }
    est = make_estimator(cfg, seed)
    try:
        est.fit(
            train_ds.features,
            train_ds.labels,
            protected=train_ds.protected,
            sample_weight=train_ds.weights,
            validation=(test_ds.features, test_ds.labels, test_ds.protected, test_ds.weights),
        )
    except DivergenceError as exc:
        logger.warning("run %s diverged: %s", record["run_id"], exc)
        record.update(status="diverged", error=str(exc), diverged_epoch=exc.epoch, metrics=None, trace=None)
        return record
    report = audit(est, test_ds, cfg.threshold)
    record.update(
        status="ok",
        error=None,
        best_epoch=int(est.best_epoch_),
        metrics=report.to_row(),
        report=report.to_dict(),
        trace=est.trace_,
    )
    return record


def run_cell(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    """Train and audit every (dataset, trial, fold) run of one cell.

    Records come back in (dataset, trial, fold) order whatever ``jobs`` is.
    Each carries the config hash, its seed, the test-fold metrics and the
    per-epoch loss trace. A diverged run is kept with ``status="diverged"``.
    """
    chash = cfg.hash()
    datasets = _load_datasets(cfg)
    tasks = []
    for d, ds in enumerate(datasets):
        for t in range(cfg.trials):
            plan = make_folds(ds.n_rows, cfg.folds, fold_seed(cfg.base_seed, d, t), labels=ds.labels)
            tasks.extend((cfg, ds, d, t, f, plan, chash) for f in range(cfg.folds))
    if jobs == 1:
        return [_run_one(*task) for task in tasks]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=jobs)(delayed(_run_one)(*task) for task in tasks)


# ---------------------------------------------------------------- aggregation


def summarize(values) -> dict:
    """Sample mean, sample std (n - 1 denominator) and 1.96-std half-width.

    ``None``/NaN entries are dropped; ``n`` reports how many remained.
    """
    vals = np.array([v for v in values if v is not None and not math.isnan(v)], dtype=float)
    n = int(vals.size)
    if n == 0:
        return {"mean": None, "std": None, "ci_halfwidth": None, "n": 0}
    # sort so the floating-point sum does not depend on record order
    vals = np.sort(vals)
    mean = float(math.fsum(vals) / n)
    std = float(math.sqrt(math.fsum((vals - mean) ** 2) / (n - 1))) if n > 1 else 0.0
    return {"mean": mean, "std": std, "ci_halfwidth": 1.96 * std, "n": n}


def aggregate(records, metrics=SUMMARY_METRICS) -> dict:
    """Per-metric summary over the successful records of a cell."""
    ok = [r for r in records if r.get("status", "ok") == "ok" and r.get("metrics") is not None]
    return {m: summarize(r["metrics"].get(m) for r in ok) for m in metrics}


@dataclass
class CellResult:
    value: object
    config: ExperimentConfig
    records: list
    stats: dict

    @property
    def n_diverged(self) -> int:
        return sum(r["status"] != "ok" for r in self.records)

    def mean(self, metric: str):
        return self.stats[metric]["mean"]

    def std(self, metric: str):
        return self.stats[metric]["std"]


@dataclass
class SweepResult:
    """One :class:`CellResult` per swept value."""

    axis: Axis
    values: list
    cells: list
    base_config: ExperimentConfig

    def means(self, metric: str) -> list:
        return [c.mean(metric) for c in self.cells]

    def stds(self, metric: str) -> list:
        return [c.std(metric) for c in self.cells]

    def to_dict(self, include_traces: bool = False) -> dict:
        cells = []
        for c in self.cells:
            recs = []
            for r in c.records:
                r = dict(r)
                if not include_traces:
                    r.pop("trace", None)
                recs.append(r)
            cells.append(
                {
                    "value": c.value,
                    "config": c.config.to_dict(),
                    "config_hash": c.config.hash(),
                    "n_records": len(c.records),
                    "n_diverged": c.n_diverged,
                    "stats": c.stats,
                    "records": recs,
                }
            )
        return {
            "tool_version": __version__,
            "axis": self.axis.value,
            "values": list(self.values),
            "base_config": self.base_config.to_dict(),
            "base_config_hash": self.base_config.hash(),
            "cells": cells,
        }

    def cells_rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            row = {"axis": self.axis.value, "value": c.value, "n_records": len(c.records), "n_diverged": c.n_diverged}
            for m, s in c.stats.items():
                row[f"{m}_mean"] = s["mean"]
                row[f"{m}_std"] = s["std"]
                row[f"{m}_ci"] = s["ci_halfwidth"]
            rows.append(row)
        return rows

    def write(self, outdir, traces: bool = True, extra: dict | None = None) -> Path:
        """Write ``results.json``, ``cells.csv`` and one ``trace_<run>.csv`` per run."""
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        with open(out / "results.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, default=_json_default)
        rows = self.cells_rows()
        with open(out / "cells.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        if traces:
            for i, c in enumerate(self.cells):
                for r in c.records:
                    if r.get("trace"):
                        write_trace(r["trace"], out / f"trace_c{i}_{r['run_id']}.csv")
        return out


def write_trace(trace: list, path) -> None:
    cols = [c for c in TRACE_COLUMNS if c in trace[0]]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(trace)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, enum.Enum):
        return o.value
    if isinstance(o, FairnessReport):
        return o.to_dict()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------- sweeps


def with_axis_value(base: ExperimentConfig, axis, value) -> ExperimentConfig:
    """Copy of ``base`` with one axis set to ``value``."""
    axis = Axis(axis)
    if axis is Axis.LAMBDA:
        mit = base.mitigation if base.mitigation is not None else MitigationConfig()
        return dataclasses.replace(base, mitigation=dataclasses.replace(mit, lam=float(value)))
    if not base.is_synthetic:
        raise UnsupportedAxisError(f"axis {axis.value!r} needs a synthetic data source")
    if axis is Axis.COV_ZX:
        src = dataclasses.replace(base.source, cov_ax=cov_zx_to_cov_ax(float(value)))
    elif axis is Axis.NUM_PREDICTORS:
        src = dataclasses.replace(base.source, n_predictors=int(value))
    else:
        src = dataclasses.replace(base.source, sample_size=int(value))
    return dataclasses.replace(base, source=src)


def sweep(axis, values, base_cfg: ExperimentConfig, jobs: int = 1, runner=run_cell) -> SweepResult:
    """Run one cell per value of ``axis``, holding the rest of ``base_cfg`` fixed.

    Covariance values are the target Cov(z, x); they are mapped to the latent
    covariance before generation. ``runner`` lets callers memoize cells.
    """
    axis = Axis(axis)
    values = list(values)
    if not values:
        raise ValueError("values must be non-empty")
    configs = [with_axis_value(base_cfg, axis, v) for v in values]
    cells = []
    for v, cfg in zip(values, configs):
        logger.info("cell %s=%s", axis.value, v)
        records = runner(cfg, jobs=jobs)
        cells.append(CellResult(value=v, config=cfg, records=records, stats=aggregate(records)))
    return SweepResult(axis=axis, values=values, cells=cells, base_config=base_cfg)
