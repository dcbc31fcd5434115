"""``fairgap`` command-line entry point.

Subcommands: ``synth``, ``train``, ``audit`` and ``sweep``. Every option can
also come from a JSON file passed with ``--config``; explicit flags win over
file values, which win over built-in defaults. The seed default is read from
the ``FAIRGAP_SEED`` environment variable when set.

Exit codes: 0 success, 1 usage or input error, 2 data generation failure,
3 training divergence, 4 sweep axis unsupported for the data source.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import FairClassifier
from .fairness import audit, report_from_predictions
from .harness import (
    FULL_SCALE_SAMPLE_SIZE,
    Axis,
    CsvSource,
    ExperimentConfig,
    UnsupportedAxisError,
    sweep,
)
from .mitigation import MitigationConfig
from .models import DivergenceError, ModelSpec, TrainConfig
from .synthgen import GenerationError, SyntheticConfig, cov_zx_to_cov_ax, generate_dataset
from .tabular import DataError, downsample_majority, holdout_split, load_csv, write_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_GENERATION = 2
EXIT_DIVERGENCE = 3
EXIT_AXIS = 4

logger = logging.getLogger("fairgap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _env_seed() -> int:
    raw = os.environ.get("FAIRGAP_SEED")
    if raw is None or raw == "":
        return 0
    try:
        seed = int(raw)
    except ValueError:
        raise UsageError(f"FAIRGAP_SEED must be a non-negative integer, got {raw!r}") from None
    if seed < 0:
        raise UsageError(f"FAIRGAP_SEED must be a non-negative integer, got {raw!r}")
    return seed


def _csv_floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------- parser


def _add_common(p):
    p.add_argument("--config", help="JSON file of option values (explicit flags take precedence)")
    p.add_argument("--seed", type=int, help="random seed (default: $FAIRGAP_SEED or 0)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_schema(p):
    p.add_argument("--data", required=False, help="input CSV")
    p.add_argument("--label", default="y", help="label column (default: y)")
    p.add_argument("--protected", default="z", help="protected-group column (default: z)")
    p.add_argument("--weight", default=None, help="sample-weight column")
    p.add_argument("--features", type=_csv_names, default=None, help="comma-separated feature columns (default: all)")
    p.add_argument("--downsample", type=float, default=None, metavar="RATIO",
                   help="cap the majority outcome class at RATIO times the minority class")


def _add_model(p):
    p.add_argument("--model", choices=["blr", "mlp"], default="mlp")
    p.add_argument("--layers", type=int, default=3, help="hidden layers (mlp)")
    p.add_argument("--width", type=int, default=200, help="units per hidden layer (mlp)")
    p.add_argument("--dropout", type=float, default=0.01)
    p.add_argument("--init", choices=["xavier_uniform", "he_normal"], default="xavier_uniform")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="penalty weight in [0, 1]")
    p.add_argument("--target-class", type=int, choices=[0, 1], default=1,
                   help="label class the penalty conditions on: 1 for the FNR gap, 0 for the FPR gap")
    p.add_argument("--weighted", action="store_true", help="use sample weights in loss and penalty")
    p.add_argument("--reduction", choices=["mean", "sum"], default="mean")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=1000)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--select-on", choices=["total", "primary"], default="total")
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("--threshold", type=float, default=0.5)
    std = p.add_mutually_exclusive_group()
    std.add_argument("--standardize", dest="standardize", action="store_true", default=None)
    std.add_argument("--no-standardize", dest="standardize", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairgap", description="Fairness auditing and mitigation for tabular classifiers.")
    parser.add_argument("--version", action="version", version=f"fairgap {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--scenario", choices=["linear", "quadratic"], default="linear")
    p.add_argument("--cov-zx", type=float, default=None, help="target Cov(z, x) in [0, 0.4]")
    p.add_argument("--cov-ax", type=float, default=None, help="latent covariance (alternative to --cov-zx)")
    p.add_argument("--n", type=int, default=None, help="rows (default: 100000, or 5000 with --survey)")
    p.add_argument("--d", type=int, default=5, help="number of k predictors")
    p.add_argument("--max-rejections", type=int, default=100)
    p.add_argument("--survey", action="store_true", help="write the survey-shaped demo dataset instead")
    p.add_argument("--meta", default=None, help="metadata path (default: <output>.meta.json)")
    p.add_argument("-o", "--output", required=False, help="output CSV")

    p = sub.add_parser("train", help="train one model and audit it on a held-out split")
    _add_common(p)
    _add_schema(p)
    _add_model(p)
    p.add_argument("--holdout", type=float, default=0.2, help="held-out fraction (default: 0.2)")
    p.add_argument("-o", "--output", default="model.json", help="model JSON path")
    p.add_argument("--report", default=None, help="report JSON path (default: <output>.report.json)")

    p = sub.add_parser("audit", help="fairness report for a saved model or a predictions file")
    _add_common(p)
    _add_schema(p)
    p.add_argument("--model-file", "--model", dest="model_file", default=None, help="model JSON from `train`")
    p.add_argument("--predictions", default=None, help="CSV holding labels, predictions and groups")
    p.add_argument("--pred-col", default="y_pred", help="prediction column of --predictions")
    p.add_argument("--full", action="store_true", help="audit every row instead of the training holdout")
    p.add_argument("--holdout", type=float, default=0.2, help=argparse.SUPPRESS)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("-o", "--output", default=None, help="report JSON path (default: stdout)")

    p = sub.add_parser("sweep", help="cross-validated sweep over one axis")
    _add_common(p)
    _add_schema(p)
    _add_model(p)
    p.add_argument("--scenario", choices=["linear", "quadratic"], default="linear")
    p.add_argument("--cov-zx", type=float, default=0.2)
    p.add_argument("--n", type=int, default=None, help="synthetic rows (default: 100000)")
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--paper-scale", action="store_true", help="use 1,000,000 synthetic rows")
    p.add_argument("--axis", choices=[a.value for a in Axis], required=False)
    p.add_argument("--values", type=_csv_floats, required=False)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--datasets", type=int, default=None, help="datasets per cell (default: 3 synthetic, 1 CSV)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all CPUs)")
    p.add_argument("--no-traces", action="store_true", help="skip trace_<run>.csv files")
    p.add_argument("-o", "--output", default="sweep_out", help="output directory")
    return parser


# ---------------------------------------------------------------- config resolution

_RESOLVE_SKIP = {"config", "verbose", "command"}


def _load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    # artifacts embed their resolved options under "config"
    if isinstance(doc.get("config"), dict) and "command" in doc["config"]:
        doc = doc["config"]
    return {k.replace("-", "_"): v for k, v in doc.items()}


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required: synth, train, audit or sweep")
    if args.config:
        values = _load_config_file(args.config)
        if values.get("command", args.command) != args.command:
            raise UsageError(f"config file is for `{values['command']}`, not `{args.command}`")
        values.pop("command", None)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known - {"lambda"})
        if unknown:
            raise UsageError(f"unknown option(s) in config file: {', '.join(unknown)}")
        if "lambda" in values:
            values["lam"] = values.pop("lambda")
        for key in _RESOLVE_SKIP:
            values.pop(key, None)
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = _env_seed()
    if args.seed < 0:
        raise UsageError("--seed must be non-negative")
    return args


def resolved(args) -> dict:
    """The fully resolved option set echoed into every artifact."""
    d = {k: v for k, v in vars(args).items() if k not in _RESOLVE_SKIP}
    d["command"] = args.command
    return d


def _provenance(args) -> dict:
    return {"tool_version": __version__, "config": resolved(args)}


def _write_json(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------- commands


def _need(args, *names):
    for name in names:
        if getattr(args, name) in (None, []):
            raise UsageError(f"--{name.replace('_', '-')} is required")


def cmd_synth(args) -> int:
    _need(args, "output")
    out = Path(args.output)
    meta_path = Path(args.meta) if args.meta else out.with_suffix(".meta.json")
    if args.n is None:
        args.n = 5000 if args.survey else 100_000
    if args.survey:
        from .survey import generate_survey

        ds = generate_survey(args.n, args.seed)
        write_csv(ds, out)
        meta = {"kind": "survey", "rows": ds.n_rows, "positive_rate": float(ds.labels.mean()),
                "mean_protected": float(ds.protected.mean()), "seed": args.seed}
    else:
        if args.cov_zx is not None and args.cov_ax is not None:
            raise UsageError("give either --cov-zx or --cov-ax, not both")
        try:
            cov_ax = cov_zx_to_cov_ax(args.cov_zx) if args.cov_zx is not None else (
                0.5 if args.cov_ax is None else args.cov_ax)
            cfg = SyntheticConfig(cov_ax=cov_ax, n_predictors=args.d, sample_size=args.n,
                                  scenario=args.scenario, seed=args.seed, max_rejections=args.max_rejections)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        ds, meta = generate_dataset(cfg, return_meta=True)
        meta["cov_zx"] = meta["cov_zx_empirical"]
        meta["cov_zx_target"] = args.cov_zx
        write_csv(ds, out)
    _write_json({**_provenance(args), **meta, "data": str(out)}, meta_path)
    logger.info("wrote %s and %s", out, meta_path)
    return EXIT_OK


def _load(args):
    _need(args, "data")
    features = "auto" if args.features is None else args.features
    ds = load_csv(args.data, args.label, args.protected, args.weight, features)
    if args.downsample is not None:
        ds = downsample_majority(ds, args.downsample, seed=args.seed)
    return ds


def _estimator(args) -> FairClassifier:
    return FairClassifier(
        model=args.model,
        hidden_layers=args.layers,
        hidden_width=args.width,
        dropout_rate=args.dropout,
        init=args.init,
        lam=args.lam,
        target_class=args.target_class,
        weighted=args.weighted,
        reduction=args.reduction,
        batch_size=args.batch,
        step_size=args.step,
        epochs=args.epochs,
        select_on=args.select_on,
        dtype=args.dtype,
        standardize=True if args.standardize is None else args.standardize,
        threshold=args.threshold,
        random_state=args.seed,
    )


def _split_for(args, ds):
    if not 0.0 < args.holdout < 1.0:
        raise UsageError("--holdout must be in (0, 1)")
    return holdout_split(ds, args.holdout, seed=args.seed)


def cmd_train(args) -> int:
    ds = _load(args)
    train_ds, test_ds = _split_for(args, ds)
    try:
        est = _estimator(args)
        est.fit(train_ds.features, train_ds.labels, protected=train_ds.protected, sample_weight=train_ds.weights)
    except DivergenceError as exc:
        print(f"error: training diverged at epoch {exc.epoch}", file=sys.stderr)
        return EXIT_DIVERGENCE
    report = audit(est, test_ds, args.threshold)
    out = Path(args.output)
    report_path = Path(args.report) if args.report else out.with_suffix(".report.json")
    data_info = {"n_rows": ds.n_rows, "n_train": train_ds.n_rows, "n_test": test_ds.n_rows,
                 "feature_names": list(ds.feature_names)}
    _write_json({**_provenance(args), "model": est.to_dict(), "trace": est.trace_, "data": data_info}, out)
    _write_json({**_provenance(args), "report": report.to_dict(), "data": data_info}, report_path)
    print(json.dumps(report.to_row(), default=_json_default))
    return EXIT_OK


def cmd_audit(args) -> int:
    if (args.model_file is None) == (args.predictions is None):
        raise UsageError("give exactly one of --model or --predictions")
    if args.predictions is not None:
        rows = load_csv(args.predictions, args.label, args.protected, args.weight, [args.pred_col])
        col = rows.feature_names.index(args.pred_col)
        pred = rows.features[:, col]
        threshold = 0.5 if args.threshold is None else args.threshold
        if not np.isin(pred, (0, 1)).all():
            pred = (pred >= threshold).astype(np.int64)
        report = report_from_predictions(rows.labels, pred.astype(np.int64), rows.protected, rows.weights, threshold)
    else:
        with open(args.model_file, encoding="utf-8") as fh:
            doc = json.load(fh)
        est = FairClassifier.from_dict(doc["model"])
        trained = doc.get("config", {})
        # rebuild the holdout split from the options the model was trained with
        for key in ("label", "protected", "weight", "features", "downsample", "seed", "holdout"):
            if key in trained:
                setattr(args, key, trained[key])
        if args.data is None:
            args.data = trained.get("data")
        ds = _load(args)
        if not args.full:
            _, ds = _split_for(args, ds)
        threshold = est.threshold if args.threshold is None else args.threshold
        report = audit(est, ds, threshold)
    doc = {**_provenance(args), "report": report.to_dict()}
    if args.output:
        _write_json(doc, args.output)
    else:
        print(json.dumps(doc, indent=2, default=_json_default))
    return EXIT_OK


def _experiment(args) -> ExperimentConfig:
    if args.data is not None:
        features = "auto" if args.features is None else tuple(args.features)
        source = CsvSource(args.data, args.label, args.protected, args.weight, features)
    else:
        n = FULL_SCALE_SAMPLE_SIZE if args.paper_scale else (100_000 if args.n is None else args.n)
        source = SyntheticConfig(cov_ax=cov_zx_to_cov_ax(args.cov_zx), n_predictors=args.d, sample_size=n,
                                 scenario=args.scenario)
    return ExperimentConfig(
        source=source,
        model=ModelSpec(kind=args.model, hidden_layers=args.layers, hidden_width=args.width,
                        dropout_rate=args.dropout, init=args.init),
        training=TrainConfig(batch_size=args.batch, step_size=args.step, epochs=args.epochs,
                             select_on=args.select_on, dtype=args.dtype),
        mitigation=MitigationConfig(lam=args.lam, q=args.target_class, weighted=args.weighted,
                                    reduction=args.reduction),
        trials=args.trials,
        folds=args.folds,
        datasets=args.datasets,
        base_seed=args.seed,
        standardize=args.standardize,
        downsample_ratio=args.downsample,
        threshold=args.threshold,
    )


def cmd_sweep(args) -> int:
    _need(args, "axis", "values")
    try:
        cfg = _experiment(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    jobs = args.jobs or os.cpu_count() or 1
    result = sweep(args.axis, args.values, cfg, jobs=jobs)
    out = result.write(args.output, traces=not args.no_traces, extra=_provenance(args))
    n_bad = sum(c.n_diverged for c in result.cells)
    if n_bad:
        logger.warning("%d run(s) diverged; see results.json", n_bad)
    print(f"wrote {out / 'results.json'} and {out / 'cells.csv'}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "audit": cmd_audit, "sweep": cmd_sweep}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except DivergenceError as exc:
        print(f"error: training diverged at epoch {exc.epoch}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except UnsupportedAxisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AXIS
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
