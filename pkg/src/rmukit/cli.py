"""Command-line interface.

Exit codes: 0 success, 2 usage or invalid settings, 3 numerical failure
(divergence, failed gradient check), 4 data or shape mismatch.
"""

import argparse
import itertools
import json
import os
import sys

import numpy as np

from . import cells
from .data import FORMATS, SPLIT_KEYS, SyntheticSpec, load_dataset, save_dataset, synth_generate, variance_split
from .errors import (CheckpointError, ConfigurationError, InputError, MetricsUndefinedError, RMUKitError,
                     TrainingDivergence)
from .mathops import default_dtype
from .metrics import compute_metrics
from .network import build_net
from .persist import TRACE_FIELDS, atomic_write, load_checkpoint, memory_trace, save_checkpoint, trace_csv
from .training import TrainConfig, grad_check, predict, randomized, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_DATA = 0, 2, 3, 4
OUTPUT_MODE_FLAGS = {"final": "final_step", "per-step": "per_step"}


class UsageError(RMUKitError):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _add_data_flags(p, required=False):
    p.add_argument("--data", "--features", dest="data", help="dataset path (JSONL file or csv_dir directory)")
    p.add_argument("--format", choices=FORMATS, default="jsonl")
    p.add_argument("--synthetic", metavar="NAME|N",
                   help="use a generated dataset instead: 'default' (10 sequences) or a sequence count")


def _load_data(args):
    if args.data and args.synthetic:
        raise UsageError("give either --data or --synthetic, not both")
    if args.synthetic:
        if args.synthetic == "default":
            spec = SyntheticSpec(seed=args.seed)
        else:
            try:
                n = int(args.synthetic)
            except ValueError:
                raise UsageError(f"--synthetic expects 'default' or a count, got {args.synthetic!r}") from None
            spec = SyntheticSpec(num_sequences=n, seed=args.seed)
        return synth_generate(spec)
    if not args.data:
        raise UsageError("one of --data or --synthetic is required")
    return load_dataset(args.data, args.format)


def _metrics_table(report):
    lines = [f"{'PLCC':>8s} {'SROCC':>8s} {'KROCC':>8s} {'RMSE':>8s}",
             f"{report.plcc:8.4f} {report.srocc:8.4f} {report.krocc:8.4f} {report.rmse:8.4f}"]
    return "\n".join(lines)


def _metrics_json(report):
    return json.dumps(report.as_dict(), sort_keys=True)


def _check_dims(net, dataset):
    if dataset and dataset[0].dim != net.d_feat:
        raise InputError(f"feature dimension mismatch: checkpoint expects d_feat={net.d_feat}, "
                         f"dataset has d_feat={dataset[0].dim}")


def cmd_train(args):
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, seed=args.seed, lr=args.lr, dropout=args.dropout,
        cell_kind=args.cell, init=args.init, output_mode=OUTPUT_MODE_FLAGS[args.output_mode],
        hidden=args.hidden, proj=args.proj, input_activation=args.input_activation, clip_norm=args.clip_norm,
    )
    try:
        config.validate()
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    dataset = _load_data(args)
    if not dataset:
        raise InputError("dataset is empty")
    key = args.split_key
    if key is None:
        key = "variance_key" if all(s.variance_key is not None for s in dataset) else "per_step_target_variance"
    train_set, test_set = variance_split(dataset, args.train_fraction, key)
    if not train_set:
        raise InputError("the split left the training set empty")
    if config.proj is None:
        # the cell sees inputs as wide as the features, so counts match the n1 = d_feat accounting
        config.proj = dataset[0].dim
    net = config.build_net(dataset[0].dim)
    print(f"cell: {config.cell_kind}  d_feat={net.d_feat} d_proj={net.d_proj} d_hid={net.d_hid}")
    print(f"cell parameters: {net.cell_param_count}")
    print(f"split ({key}): {len(train_set)} train / {len(test_set)} test")

    result = train(net, train_set, config, test_set or None)

    os.makedirs(args.out, exist_ok=True)
    snapshot = config.as_dict()
    save_checkpoint(os.path.join(args.out, "checkpoint.json"), result.final, snapshot, config.seed)
    save_checkpoint(os.path.join(args.out, "best.json"), result.best, snapshot, config.seed,
                    extra={"best_epoch": result.best_epoch})
    atomic_write(os.path.join(args.out, "trainlog.csv"), result.log.to_csv(include_timing=args.log_timing))
    last = result.log.records[-1]
    print(f"final train loss: {last.train_loss:.6g}")
    if len(test_set) >= 2:
        try:
            report = compute_metrics(predict(result.final, test_set), [s.target for s in test_set])
        except MetricsUndefinedError as exc:
            print(f"note: no test metrics: {exc}", file=sys.stderr)
        else:
            atomic_write(os.path.join(args.out, "metrics.json"), _metrics_json(report) + "\n")
            print("test metrics (final model):")
            print(_metrics_table(report))
    elif test_set:
        print("note: no test metrics: the test split has a single sequence", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args):
    net, _ = load_checkpoint(args.checkpoint)
    dataset = _load_data(args)
    if not dataset:
        raise InputError("dataset is empty")
    _check_dims(net, dataset)
    report = compute_metrics(predict(net, dataset), [s.target for s in dataset])
    print(_metrics_table(report))
    print(_metrics_json(report))
    if args.out:
        atomic_write(args.out, _metrics_json(report) + "\n")
    return EXIT_OK


def cmd_trace(args):
    net, _ = load_checkpoint(args.checkpoint)
    dataset = _load_data(args)
    if not dataset:
        raise InputError("dataset is empty")
    _check_dims(net, dataset)
    if args.id is None:
        seq = dataset[0]
    else:
        matches = [s for s in dataset if s.id == args.id]
        if not matches:
            raise InputError(f"no sequence with id {args.id!r}")
        seq = matches[0]
    if net.cell_kind != "rmu":
        print(f"note: {net.cell_kind} has no stimulus response or reinforcement memories; "
              f"exporting {', '.join(TRACE_FIELDS[net.cell_kind])} only", file=sys.stderr)
    text = trace_csv(*memory_trace(net, seq))
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_params(args):
    kinds = cells.CELL_KINDS if args.cell == "all" else (args.cell,)
    for kind in kinds:
        count = cells.param_count(kind, args.n1, args.n2)
        memory = cells.memory_estimate(kind, args.n1, args.n2)
        if len(kinds) == 1:
            print(f"parameters: {count}")
            print(f"memory per step: {memory}")
        else:
            print(f"{kind:5s} parameters: {count:10d}  memory per step: {memory:10d}")
    return EXIT_OK


def cmd_gradcheck(args):
    if default_dtype() != np.float64:
        raise UsageError("gradient checks require RMUKIT_PRECISION=f64")
    kinds = cells.CELL_KINDS if args.cell == "all" else (args.cell,)
    grid = list(itertools.product((2, 5), (1, 3, 8), (1, 4, 10)))
    worst, failures = 0.0, 0
    for kind in kinds:
        for target in ("cell", "net"):
            kind_worst = 0.0
            for (d_in, d_hid, T), seed in itertools.product(grid, range(args.seed, args.seed + args.seeds)):
                base = (cells.init_params(kind, d_in, d_hid) if target == "cell"
                        else build_net(kind, d_in, d_hid, dropout_rate=0.5))
                report = grad_check(randomized(base, seed), tolerance=args.tol, T=T, seed=seed + 1000)
                kind_worst = max(kind_worst, report.max_error)
                if not report.passed:
                    failures += 1
                    print(f"FAIL {kind} {target} d_in={d_in} d_hid={d_hid} T={T} seed={seed}")
                    print(report)
            worst = max(worst, kind_worst)
            print(f"{kind:5s} {target:4s} {len(grid) * args.seeds:4d} checks  max rel error {kind_worst:.3e}")
    status = "PASS" if failures == 0 else f"FAIL ({failures} configurations)"
    print(f"{status}: max relative error {worst:.3e}, tolerance {args.tol:g}")
    return EXIT_OK if failures == 0 else EXIT_NUMERIC


def cmd_synth(args):
    spec = SyntheticSpec(num_sequences=args.n, T=args.T, d_1=args.d, num_segments=args.segments,
                         noise=args.noise, alpha=args.alpha, seed=args.seed)
    try:
        dataset = synth_generate(spec)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    save_dataset(dataset, args.out, args.format)
    print(f"wrote {len(dataset)} sequences to {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="rmukit", description="Reinforcement Memory Unit toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write checkpoint + TrainLog CSV")
    _add_data_flags(p)
    p.add_argument("--cell", choices=cells.CELL_KINDS, default="rmu")
    p.add_argument("--hidden", type=_positive_int, default=32)
    p.add_argument("--proj", type=_positive_int, default=None,
                   help="projection width, i.e. the cell input size (default: the feature dimension)")
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=cells.INIT_SCHEMES, default="uniform_scaled")
    p.add_argument("--output-mode", choices=tuple(OUTPUT_MODE_FLAGS), default="final")
    p.add_argument("--input-activation", choices=("identity", "tanh"), default="identity")
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--split-key", choices=SPLIT_KEYS, default=None)
    p.add_argument("--log-timing", action="store_true", help="record wall-clock seconds in the TrainLog")
    p.add_argument("--out", default="rmukit_run", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", help="export per-timestep memories and appraisal as CSV")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--id", help="sequence id (default: first sequence)")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("params", help="parameter count and per-step memory of a cell")
    p.add_argument("--cell", choices=cells.CELL_KINDS + ("all",), default="all")
    p.add_argument("--n1", type=_positive_int, required=True, help="input size")
    p.add_argument("--n2", type=_positive_int, required=True, help="hidden size")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcheck", help="finite-difference check of every analytic gradient")
    p.add_argument("--cell", choices=cells.CELL_KINDS + ("all",), default="all")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=_positive_int, default=2, help="seeds per grid point")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic JSONL dataset")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--T", type=_positive_int, default=50)
    p.add_argument("--d", type=_positive_int, default=3)
    p.add_argument("--segments", type=_positive_int, default=4)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=FORMATS, default="jsonl")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        default_dtype()
        return args.func(args)
    except UsageError as exc:
        print(f"rmukit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as exc:
        print(f"rmukit {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, CheckpointError, MetricsUndefinedError) as exc:
        print(f"rmukit {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigurationError as exc:
        print(f"rmukit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE if "RMUKIT_PRECISION" in str(exc) else EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
