"""quenchnet command line: ingest, calibrate, generate, train, evaluate, sweep, predict.

Options may also come from ``--config FILE`` (a JSON object keyed by option
name, dashes or underscores). Values on the command line win over the file,
which wins over built-in defaults. Exit status is 0 on success, 1 for domain
or convergence failures and 2 for I/O and usage errors.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import raw
from .calibration import build_calibration, read_calibration, write_calibration
from .dataset import (
    DEFAULT_C_RANGE,
    DEFAULT_M,
    DEFAULT_NOISE_SIGMA,
    DEFAULT_TARGET_SHIFT,
    DEFAULT_TEST_CONCENTRATIONS,
    DEFAULT_TRAIN_FRACTION,
    MismatchSpec,
    calibrate_curvature_bias,
    generate_mismatch_test,
    generate_synthetic,
    read_dataset,
    split,
    write_dataset,
)
from .errors import ConstructionError, DomainError, FitError, ParseError, TrainingAborted
from .evaluation import (
    CI_EPOCHS,
    DEFAULT_BINS,
    DEFAULT_LAYERS,
    DEFAULT_NEURONS,
    SweepGrid,
    ae_per_observation,
    concentration_profile,
    mae,
    run_sweep,
    sweep_summary,
    write_ae_csv,
    write_profile_csv,
    write_sweep_csv,
)
from .network import NetworkSpec, TrainConfig, load_checkpoint, load_model, save_model, train

log = logging.getLogger("quenchnet")


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(x) for x in str(text).replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def _ints(text):
    try:
        return [int(x) for x in str(text).replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None


# (flag, type, default, help); the dest is the flag without dashes
TRAIN_OPTS = [
    ("--layers", int, 3, "hidden layers"),
    ("--neurons", int, 50, "neurons per hidden layer"),
    ("--epochs", int, 100_000, "full-batch Adam epochs"),
    ("--lr", float, 0.001, "Adam learning rate"),
    ("--seed", int, None, "seed for the split and the weight init (required)"),
    ("--train-fraction", float, DEFAULT_TRAIN_FRACTION, "share of observations used for training"),
    ("--log-every", int, 1000, "cost trace interval in epochs"),
]

OPTIONS = {
    "ingest": [],
    "calibrate": [
        ("--temperature", float, None, "temperature bundle to calibrate (required if the file holds several)"),
        ("--max-iter", int, 200, "Levenberg-Marquardt iteration cap"),
    ],
    "generate": [
        ("--seed", int, None, "generator seed (required)"),
        ("--m", int, DEFAULT_M, "number of synthetic observations"),
        ("--c-min", float, DEFAULT_C_RANGE[0], "lowest concentration, %% air"),
        ("--c-max", float, DEFAULT_C_RANGE[1], "highest concentration, %% air"),
        ("--grid", _floats, None, "frequency grid in Hz (default: calibration knots)"),
        ("--mismatch", bool, False, "emulate a measured test set instead"),
        ("--concentrations", _floats, list(DEFAULT_TEST_CONCENTRATIONS), "mismatch test concentrations"),
        ("--noise-sigma", float, DEFAULT_NOISE_SIGMA, "std of additive ratio noise (mismatch)"),
        ("--curvature-bias", float, None, "quadratic ratio bias (default: calibrated to --target-shift)"),
        ("--target-shift", float, DEFAULT_TARGET_SHIFT, "apparent concentration shift at 100 %% air"),
    ],
    "train": TRAIN_OPTS + [("--resume", str, None, "continue from this model file and its optimizer state")],
    "evaluate": [
        ("--bins", _floats, list(DEFAULT_BINS), "profile bin edges, %% air"),
    ],
    "sweep": [
        ("--dev", str, None, "dev dataset (default: split the training file)"),
        ("--test", str, None, "optional test dataset"),
        ("--layer-counts", _ints, list(DEFAULT_LAYERS), "hidden layer counts"),
        ("--neuron-counts", _ints, list(DEFAULT_NEURONS), "neurons-per-layer counts"),
        ("--epochs", int, CI_EPOCHS, "epochs per trial"),
        ("--lr", float, 0.001, "Adam learning rate"),
        ("--seed", int, None, "base seed for trials and split (required)"),
        ("--train-fraction", float, DEFAULT_TRAIN_FRACTION, "split fraction when --dev is absent"),
        ("--workers", int, 1, "concurrent trials"),
        ("--no-timing", bool, False, "leave duration_s empty so reports are byte-reproducible"),
    ],
    "predict": [
        ("--ratios", _floats, None, "one ratio vector"),
        ("--csv", str, None, "CSV of ratio vectors, one per row (a header row is skipped)"),
    ],
}

POSITIONALS = {
    "ingest": [("raw", "raw phase CSV"), ("out", "curve bundle JSON to write")],
    "calibrate": [("curves", "curve bundle JSON"), ("out", "calibration JSON to write")],
    "generate": [("calibration", "calibration JSON"), ("out", "dataset CSV to write")],
    "train": [("dataset", "dataset CSV"), ("out", "model JSON to write")],
    "evaluate": [("model", "model JSON"), ("dataset", "dataset CSV"),
                 ("out", "AE table CSV to write; the profile goes to <stem>.profile.csv")],
    "sweep": [("train", "training dataset CSV"), ("out", "report CSV to write; summary in <stem>.txt")],
    "predict": [("model", "model JSON")],
}

SYNOPSIS = {
    "ingest": "normalize raw phase angles into quench-curve bundles",
    "calibrate": "fit two-site parameters per frequency",
    "generate": "synthesize a dataset from a calibration",
    "train": "train a network on a dataset (random train/dev split)",
    "evaluate": "absolute-error table and concentration profile",
    "sweep": "architecture sweep over layers x neurons",
    "predict": "predict % air for ratio vectors",
}


def _dest(flag):
    return flag.lstrip("-").replace("-", "_")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="quenchnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=SYNOPSIS[name], description=SYNOPSIS[name])
        for dest, help_ in POSITIONALS[name]:
            p.add_argument(dest, help=help_)
        p.add_argument("--config", help="JSON file of option values")
        for flag, typ, default, help_ in opts:
            shown = f"{help_} (default: {default})" if default is not None and typ is not bool else help_
            if typ is bool:
                p.add_argument(flag, action="store_const", const=True, default=None, help=help_)
            else:
                p.add_argument(flag, type=typ, default=None, help=shown)
    return parser


def _coerce(typ, value, key):
    try:
        if typ is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if typ in (_floats, _ints):
            if isinstance(value, (list, tuple)):
                value = " ".join(str(v) for v in value)
            return typ(value)
        if typ is int and (isinstance(value, bool) or float(value) != int(value)):
            raise TypeError
        return typ(value)
    except (TypeError, ValueError, argparse.ArgumentTypeError):
        raise UsageError(f"config key {key!r}: bad value {value!r}") from None


def resolve_options(command, args):
    """Merge defaults < config file < flags into a plain dict."""
    opts = OPTIONS[command]
    config = {}
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", args.config, exc.lineno) from exc
        if not isinstance(config, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
        known = {_dest(flag) for flag, *_ in opts}
        unknown = sorted(set(config) - known)
        if unknown:
            raise UsageError(f"{args.config}: unknown config key(s): {', '.join(unknown)}")
    out = {}
    for flag, typ, default, _ in opts:
        key = _dest(flag)
        value = getattr(args, key)
        if value is None and key in config:
            value = _coerce(typ, config[key], key)
        out[key] = default if value is None else value
    return out


def _require_seed(opts):
    if opts["seed"] is None:
        raise UsageError("an explicit --seed (or 'seed' in the config file) is required")


# -- commands -------------------------------------------------------------------

def cmd_ingest(args, opts):
    bundles = raw.normalize(raw.read_raw_phase(args.raw))
    raw.write_curves(bundles, args.out)
    for temp, curves in sorted(bundles.items()):
        print(f"{temp:g} degC: {len(curves)} curves")


def cmd_calibrate(args, opts):
    bundles = raw.read_curves(args.curves)
    temp = opts["temperature"]
    if temp is None:
        if len(bundles) != 1:
            raise UsageError(f"{args.curves} holds temperatures {sorted(bundles)}; choose one with --temperature")
        temp = next(iter(bundles))
    if temp not in bundles:
        raise DomainError(f"no curves at {temp:g} degC in {args.curves}")
    table = build_calibration(bundles[temp], max_iter=opts["max_iter"])
    failed = [f"{hz:g} Hz" for hz, ok in zip(table.frequencies_hz, table.converged) if not ok]
    if failed:
        raise FitError(f"fit did not converge at {', '.join(failed)}")
    write_calibration(table, args.out)
    print(f"calibrated {table.frequencies_hz.size} frequencies at {temp:g} degC")


def cmd_generate(args, opts):
    _require_seed(opts)
    table = read_calibration(args.calibration)
    if opts["mismatch"]:
        bias = opts["curvature_bias"]
        if bias is None:
            bias = calibrate_curvature_bias(table, opts["grid"], target_shift=opts["target_shift"])
        spec = MismatchSpec(opts["noise_sigma"], bias)
        ds = generate_mismatch_test(table, opts["grid"], opts["concentrations"], spec, seed=opts["seed"])
    else:
        ds = generate_synthetic(table, opts["grid"], opts["m"], (opts["c_min"], opts["c_max"]), seed=opts["seed"])
    write_dataset(ds, args.out)
    print(f"wrote {len(ds)} {ds.provenance} observations")


def cmd_train(args, opts):
    _require_seed(opts)
    data = read_dataset(args.dataset)
    tr, dev = split(data, opts["train_fraction"], seed=opts["seed"])
    cfg = TrainConfig(learning_rate=opts["lr"], epochs=opts["epochs"], seed=opts["seed"], log_every=opts["log_every"])
    spec = NetworkSpec(data.n_features, opts["layers"], opts["neurons"])
    model = state = None
    if opts["resume"]:
        model, state, _ = load_checkpoint(opts["resume"])
    model, report = train(spec, tr, cfg, model=model, state=state)
    save_model(args.out, model, report.adam_state, cfg)
    print(f"MAE_train {mae(model, tr):.6f}")
    print(f"MAE_dev   {mae(model, dev):.6f}")


def cmd_evaluate(args, opts):
    model = load_model(args.model)
    data = read_dataset(args.dataset)
    table = ae_per_observation(model, data)
    profile = concentration_profile(model, data, opts["bins"])
    out = Path(args.out)
    write_ae_csv(table, out)
    write_profile_csv(profile, out.with_name(out.stem + ".profile.csv"))
    print(f"MAE {float(np.mean(table.ae)):.6f}  max AE {float(np.max(table.ae)):.6f}  n={len(table)}")


def cmd_sweep(args, opts):
    _require_seed(opts)
    tr = read_dataset(args.train)
    if opts["dev"]:
        dev = read_dataset(opts["dev"])
    else:
        tr, dev = split(tr, opts["train_fraction"], seed=opts["seed"])
    test = read_dataset(opts["test"]) if opts["test"] else None
    if opts["workers"] < 1:
        raise UsageError("--workers must be >= 1")
    grid = SweepGrid(opts["layer_counts"], opts["neuron_counts"],
                     TrainConfig(learning_rate=opts["lr"], epochs=opts["epochs"]), opts["seed"])
    report = run_sweep(grid, tr, dev, test, workers=opts["workers"], keep_models=False)
    if opts["no_timing"]:
        for row in report.rows:
            row.duration_s = float("nan")
    out = Path(args.out)
    write_sweep_csv(report, out)
    summary = sweep_summary(report)
    out.with_suffix(".txt").write_text(summary, encoding="utf-8")
    print(summary, end="")


def _read_ratio_csv(path, n):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for rec in reader:
            if not rec:
                continue
            try:
                values = [float(x) for x in rec]
            except ValueError:
                if reader.line_num == 1:
                    continue
                raise ParseError("non-numeric field", path, reader.line_num) from None
            if len(values) != n:
                raise ParseError(f"expected {n} ratios, got {len(values)}", path, reader.line_num)
            rows.append(values)
    return np.array(rows, dtype=float).reshape(len(rows), n)


def cmd_predict(args, opts):
    model = load_model(args.model)
    n = model.spec.input_dim
    if (opts["ratios"] is None) == (opts["csv"] is None):
        raise UsageError("give exactly one of --ratios or --csv")
    if opts["ratios"] is not None:
        if len(opts["ratios"]) != n:
            raise UsageError(f"--ratios needs {n} values, got {len(opts['ratios'])}")
        x = np.array([opts["ratios"]])
    else:
        x = _read_ratio_csv(opts["csv"], n)
    if np.any(~((x > 0) & (x <= 1))):
        raise DomainError("ratios must lie in (0, 1]")
    for value in model.predict(x):
        print(f"{value:.6f}")


COMMANDS = {
    "ingest": cmd_ingest,
    "calibrate": cmd_calibrate,
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "predict": cmd_predict,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve_options(args.command, args)
        COMMANDS[args.command](args, opts)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 2
    except (DomainError, ConstructionError, FitError, TrainingAborted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
