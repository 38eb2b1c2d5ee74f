"""Command-line entry point: `seplab <command> [flags]`.

Exit codes: 0 success, 1 usage error, 2 data/format/I-O error, 3 numeric
divergence. Diagnostics go to stderr; summaries to stdout; data to the files
named by the flags. Every command that writes `--out` also writes
`<out>.manifest.json` with the resolved configuration, seeds, input digests
and duration.
"""

import argparse
import json
import logging
import sys
import time
from typing import Callable, List, Optional, Sequence

import numpy as np
import requests

from . import __version__
from .attacks import AttackConfig, AttackKind, attack_dataset
from .classifier import DistanceClassifier
from .config import RunConfig, load_run_config, load_user_defaults
from .datasets import (
    Dataset,
    SpiralParams,
    cifar10_files,
    gen_blobs,
    gen_spiral,
    load_cifar10_dir,
    load_dataset,
    load_mnist_dir,
    mnist_files,
    random_relabel,
    save_dataset,
)
from .errors import DataFormatError, NumericStateError, RejectedInputError
from .lipschitz import LipschitzConfig, empirical_lipschitz
from .metrics import Metric
from .network import decision_grid, load_model, save_model
from .reporting import RunManifest, histogram_rows, write_manifest, write_report
from .rng import RandomStream
from .separation import SeparationMode, cross_class_nn, flag_outliers, histogram
from .training import evaluate, recipe, recipe_names, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: error: {message}")


# DATA ACCESS


def _named(spec: str, data_dir: Optional[str]):
    """(source, split) of `mnist:<split>` / `cifar10:<split>`, or None for a file path."""
    source, _, split = spec.partition(":")
    if source not in ("mnist", "cifar10") or split not in ("train", "test"):
        return None
    if not data_dir:
        raise RejectedInputError(f"{spec!r} needs --data-dir or data_dir in the user defaults")
    return source, split


def resolve_data(spec: str, data_dir: Optional[str]) -> Dataset:
    """Load `mnist:<split>`, `cifar10:<split>` from the data directory, or a SEPLABDS file."""
    named = _named(spec, data_dir)
    if named is None:
        return load_dataset(spec)
    source, split = named
    loader = load_mnist_dir if source == "mnist" else load_cifar10_dir
    return loader(data_dir, split)


def data_files(spec: str, data_dir: Optional[str]) -> List[str]:
    """Files read when `spec` is resolved."""
    named = _named(spec, data_dir)
    if named is None:
        return [spec]
    source, split = named
    if source == "mnist":
        return list(mnist_files(data_dir, split))
    return cifar10_files(data_dir, split)


def _inputs(manifest: RunManifest, data_dir: Optional[str], *specs: Optional[str]) -> None:
    for spec in specs:
        if spec:
            for path in data_files(spec, data_dir):
                manifest.add_input(path)


def _print(document) -> None:
    sys.stdout.write(json.dumps(document, indent=2, default=str) + "\n")


# COMMANDS


def cmd_separation(args, manifest: RunManifest) -> None:
    queries = resolve_data(args.queries, args.data_dir)
    mode = SeparationMode(args.mode)
    if mode is SeparationMode.TRAIN_TRAIN:
        if args.references and args.references != args.queries:
            raise RejectedInputError("train-train separation queries the reference set itself")
        references = queries
    else:
        if not args.references:
            raise RejectedInputError("test-train separation needs --references")
        references = resolve_data(args.references, args.data_dir)
    _inputs(manifest, args.data_dir, args.queries, args.references)

    if args.random_labels:
        manifest.seeds["labels"] = args.seed
        references = random_relabel(references, args.seed)
        query_seed = RandomStream(args.seed).spawn(1).derive_seed()
        queries = references if mode is SeparationMode.TRAIN_TRAIN else random_relabel(queries, query_seed)

    report = cross_class_nn(
        queries,
        references,
        args.metric,
        exclude_identical_index=mode is SeparationMode.TRAIN_TRAIN,
        threads=args.threads,
        seed=args.seed,
        progress=args.progress,
    )
    write_report(report, args.out, "json")
    manifest.outputs.append(args.out)
    if args.hist:
        write_report(histogram_rows(histogram(report, args.hist_bin)), args.hist, "csv")
        manifest.outputs.append(args.hist)

    summary = report.summary(args.epsilon)
    if args.flag_below is not None:
        flagged = flag_outliers(report, args.flag_below)
        summary["flagged"] = [r.query_index for r in flagged]
    _print(summary)


def cmd_certify(args, manifest: RunManifest) -> None:
    train_ds = resolve_data(args.train, args.data_dir)
    test_ds = resolve_data(args.test, args.data_dir)
    _inputs(manifest, args.data_dir, args.train, args.test)

    clf = DistanceClassifier.from_dataset(train_ds, args.radius, args.metric)
    write_report(clf.certify_dataset(test_ds), args.out, "json")
    manifest.outputs.append(args.out)
    if args.grid:
        write_report(clf.score_grid(args.grid_resolution), args.grid, "csv")
        manifest.outputs.append(args.grid)
    _print({"radius": args.radius, "astuteness_lower_bound": clf.astuteness(test_ds, args.radius)})


def _run_config(args) -> RunConfig:
    if bool(args.config) == bool(args.recipe):
        raise RejectedInputError("give exactly one of --config and --recipe")
    if args.config:
        run = load_run_config(args.config)
        if args.seed_given and args.seed != run.train.seed:
            raise RejectedInputError(
                f"--seed {args.seed} conflicts with seed {run.train.seed} in {args.config}"
            )
        return run
    return RunConfig(recipe(args.recipe, seed=args.seed))


def cmd_train(args, manifest: RunManifest) -> None:
    run = _run_config(args)
    train_ds = resolve_data(args.train, args.data_dir)
    test_ds = resolve_data(args.test, args.data_dir) if args.test else None
    _inputs(manifest, args.data_dir, args.config, args.train, args.test)
    manifest.config = run.to_dict()
    manifest.seeds["root"] = run.train.seed
    manifest.seeds["train"] = run.train.seed

    net, history = train(run.train, train_ds, test_ds, progress=args.progress)
    save_model(net, args.out)
    manifest.outputs.append(args.out)
    _write_grid(net, args, manifest)
    if args.history:
        write_report(history, args.history, "csv")
        manifest.outputs.append(args.history)
    if args.report:
        if test_ds is None or run.attack is None or run.lipschitz is None:
            raise RejectedInputError("--report needs --test and attack/lipschitz sections in the config")
        report = evaluate(net, train_ds, test_ds, run.attack, run.lipschitz, run.train.method.kind, threads=args.threads)
        write_report(report, args.report, "json")
        manifest.outputs.append(args.report)


def _attack_config(args) -> AttackConfig:
    return AttackConfig(
        epsilon=args.epsilon,
        steps=args.steps,
        step_size=args.step_size,
        random_start=args.random_start,
        restarts=args.restarts,
        seed=args.seed,
    )


def cmd_attack(args, manifest: RunManifest) -> None:
    net = load_model(args.model)
    ds = resolve_data(args.data, args.data_dir)
    _inputs(manifest, args.data_dir, args.model, args.data)
    cfg = _attack_config(args)
    manifest.config = {"method": args.method, **cfg.to_dict()}
    manifest.seeds["attack"] = cfg.seed

    outcomes = attack_dataset(net, ds, cfg, args.method, threads=args.threads, progress=args.progress)
    rows = [
        {
            "index": i,
            "clean_correct": o.clean_correct,
            "success": o.success,
            "loss": o.loss_achieved,
            "distance": float(np.abs(o.adversarial_point - ds.features[i]).max(initial=0.0)),
        }
        for i, o in enumerate(outcomes)
    ]
    clean = float(np.mean([o.clean_correct for o in outcomes])) if outcomes else 0.0
    robust = float(np.mean([o.clean_correct and not o.success for o in outcomes])) if outcomes else 0.0
    document = {
        "method": args.method,
        "epsilon": cfg.epsilon,
        "clean_accuracy": clean,
        "adversarial_accuracy": robust,
        "outcomes": rows,
    }
    write_report(document, args.out, "json")
    manifest.outputs.append(args.out)
    if args.points:
        points = np.stack([o.adversarial_point for o in outcomes]) if outcomes else ds.features
        save_dataset(
            Dataset(points, ds.labels, ds.class_count, name=f"{ds.name}[{args.method}, eps={cfg.epsilon}]"),
            args.points,
        )
        manifest.outputs.append(args.points)
    _print({"method": args.method, "epsilon": cfg.epsilon, "clean": clean, "adversarial": robust})


def cmd_lipschitz(args, manifest: RunManifest) -> None:
    net = load_model(args.model)
    ds = resolve_data(args.data, args.data_dir)
    _inputs(manifest, args.data_dir, args.model, args.data)
    cfg = LipschitzConfig(epsilon=args.epsilon, steps=args.steps, step_size=args.step_size, seed=args.seed)
    manifest.config = cfg.to_dict()
    manifest.seeds["lipschitz"] = cfg.seed

    estimate = empirical_lipschitz(net, ds, cfg, threads=args.threads, progress=args.progress)
    write_report(estimate, args.out, "json")
    manifest.outputs.append(args.out)
    _print({"epsilon": cfg.epsilon, "mean": estimate.mean})


def _write_grid(net, args, manifest: RunManifest) -> None:
    if args.grid:
        write_report(decision_grid(net, args.grid_resolution), args.grid, "csv")
        manifest.outputs.append(args.grid)


def cmd_evaluate(args, manifest: RunManifest) -> None:
    net = load_model(args.model)
    train_ds = resolve_data(args.train, args.data_dir)
    test_ds = resolve_data(args.test, args.data_dir)
    _inputs(manifest, args.data_dir, args.model, args.train, args.test)
    attack = _attack_config(args)
    lip = LipschitzConfig(epsilon=args.lip_epsilon or args.epsilon, seed=args.seed)
    manifest.config = {"attack": attack.to_dict(), "lipschitz": lip.to_dict(), "kind": args.method}
    manifest.seeds["evaluate"] = args.seed

    report = evaluate(net, train_ds, test_ds, attack, lip, args.name, args.method, threads=args.threads)
    write_report(report, args.out, "json")
    manifest.outputs.append(args.out)
    if args.csv:
        write_report(report, args.csv, "csv")
        manifest.outputs.append(args.csv)
    _write_grid(net, args, manifest)
    _print(report.row())


def _write_generated(ds: Dataset, args, manifest: RunManifest) -> None:
    save_dataset(ds, args.out)
    manifest.outputs.append(args.out)
    if args.csv:
        rows = [
            {**{f"x{j + 1}": float(v) for j, v in enumerate(row)}, "label": int(label)}
            for row, label in zip(ds.features, ds.labels)
        ]
        write_report(rows, args.csv, "csv")
        manifest.outputs.append(args.csv)
    _print({"name": ds.name, "n": ds.n, "dim": ds.dim, "classes": ds.class_count})


def cmd_spiral(args, manifest: RunManifest) -> None:
    params = SpiralParams(args.n_per_class, args.x_range_max, args.noise, args.seed)
    manifest.config = {
        "n_per_class": params.n_per_class,
        "x_range_max": params.x_range_max,
        "noise": params.noise,
    }
    manifest.seeds["spiral"] = params.seed
    _write_generated(gen_spiral(params), args, manifest)


def _centers(text: str) -> List[List[float]]:
    try:
        return [[float(v) for v in point.split(",")] for point in text.split(";")]
    except ValueError:
        raise RejectedInputError(f"cannot parse centers {text!r}; expected '0.2,0.2;0.8,0.8'") from None


def cmd_blobs(args, manifest: RunManifest) -> None:
    centers = _centers(args.centers)
    manifest.config = {"centers": centers, "spread": args.spread, "n_per_class": args.n_per_class}
    manifest.seeds["blobs"] = args.seed
    _write_generated(gen_blobs(centers, args.spread, args.n_per_class, args.seed), args, manifest)


# PARSER


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="root seed (default: 0)")
    parser.add_argument("--threads", type=int, default=None, help="worker processes (default: user defaults or 1)")
    parser.add_argument("--data-dir", default=None, help="directory holding MNIST / CIFAR-10 files")


def _grid_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--grid", default=None, help="CSV of binary scores on a 2-D mesh")
    parser.add_argument("--grid-resolution", type=int, default=101)


def _attack_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epsilon", type=float, required=True, help="Linf radius")
    parser.add_argument("--steps", type=int, default=10)
    parser.add_argument("--step-size", type=float, default=None, help="default: epsilon / 5")
    parser.add_argument("--random-start", action="store_true")
    parser.add_argument("--restarts", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seplab", description="Separation, certification and robustness measurements.")
    parser.add_argument("--version", action="version", version=f"seplab {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug output")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = commands.add_parser("separation", help="nearest different-class distances")
    p.add_argument("--queries", required=True)
    p.add_argument("--references", default=None)
    p.add_argument("--metric", choices=[m.value for m in Metric], default=Metric.LINF.value)
    p.add_argument("--mode", choices=[m.value for m in SeparationMode], default=SeparationMode.TRAIN_TRAIN.value)
    p.add_argument("--out", required=True, help="JSON report")
    p.add_argument("--hist", default=None, help="histogram CSV (bin_start,count)")
    p.add_argument("--hist-bin", type=float, default=0.02)
    p.add_argument("--flag-below", type=float, default=None, help="list queries at or below this distance")
    p.add_argument("--epsilon", type=float, default=None, help="typical perturbation radius for the ratio")
    p.add_argument("--random-labels", action="store_true", help="relabel uniformly at random first")
    _common(p)
    p.set_defaults(handler=cmd_separation)

    p = commands.add_parser("certify", help="distance-classifier certificates")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--metric", choices=[m.value for m in Metric], default=Metric.LINF.value)
    p.add_argument("--out", required=True)
    _grid_flags(p)
    _common(p)
    p.set_defaults(handler=cmd_certify)

    p = commands.add_parser("train", help="train a network")
    p.add_argument("--config", default=None, help="YAML run file")
    p.add_argument("--recipe", choices=list(recipe_names()), default=None)
    p.add_argument("--train", required=True)
    p.add_argument("--test", default=None)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--history", default=None, help="CSV epoch,lr,loss,train_acc")
    p.add_argument("--report", default=None, help="evaluate after training into this JSON file")
    _grid_flags(p)
    _common(p)
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("attack", help="attack every example of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=[k.value for k in AttackKind], default=AttackKind.PGD.value)
    _attack_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--points", default=None, help="SEPLABDS file of the adversarial points")
    _common(p)
    p.set_defaults(handler=cmd_attack)

    p = commands.add_parser("lipschitz", help="empirical local Lipschitz constant")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(handler=cmd_lipschitz)

    p = commands.add_parser("evaluate", help="accuracies, gaps and Lipschitz constants")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--method", choices=[k.value for k in AttackKind], default=AttackKind.PGD.value)
    _attack_flags(p)
    p.add_argument("--lip-epsilon", type=float, default=None, help="default: --epsilon")
    p.add_argument("--name", default="", help="method label of the report row")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    _grid_flags(p)
    _common(p)
    p.set_defaults(handler=cmd_evaluate)

    p = commands.add_parser("spiral", help="generate the two-arm spiral")
    p.add_argument("--n-per-class", type=int, default=500)
    p.add_argument("--x-range-max", type=float, default=SpiralParams.x_range_max)
    p.add_argument("--noise", type=float, default=SpiralParams.noise)
    p.add_argument("--out", required=True, help="SEPLABDS file")
    p.add_argument("--csv", default=None)
    _common(p)
    p.set_defaults(handler=cmd_spiral)

    p = commands.add_parser("blobs", help="generate uniform blobs around centers")
    p.add_argument("--centers", required=True, help="points separated by ';', coordinates by ','")
    p.add_argument("--spread", type=float, required=True)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--out", required=True, help="SEPLABDS file")
    p.add_argument("--csv", default=None)
    _common(p)
    p.set_defaults(handler=cmd_blobs)

    return parser


def _configure_logging(args) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    args.progress = level <= logging.INFO


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Execute one command and return its exit code."""

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"{parser.format_usage()}{e}\n")
        return EXIT_USAGE
    except SystemExit as e:
        # --help and --version
        return EXIT_OK if not e.code else EXIT_USAGE

    _configure_logging(args)
    handler: Callable = args.handler
    args.seed_given = args.seed is not None
    if not args.seed_given:
        args.seed = 0
    try:
        defaults = load_user_defaults()
        args.data_dir = args.data_dir or defaults.data_dir
        args.threads = args.threads or defaults.threads
        manifest = RunManifest(
            command=args.command,
            config={k: v for k, v in sorted(vars(args).items()) if k not in ("handler", "progress", "seed_given")},
            seeds={"root": args.seed},
        )
        started = time.perf_counter()
        handler(args, manifest)
        manifest.duration_seconds = time.perf_counter() - started
        write_manifest(manifest, args.out)
    except RejectedInputError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except (DataFormatError, OSError, requests.RequestException) as e:
        logger.error("%s", e)
        return EXIT_DATA
    except NumericStateError as e:
        logger.error("%s", e)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
