"""Command-line entry point: ``pudet {generate,train,evaluate,experiment,gradcheck}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error
(including training divergence).  ``PUDET_OUT_DIR`` overrides ``--out``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from pudet.config import dump_config, load_config
from pudet.errors import ConfigurationError, InvalidInputError, PudetError, TrainingDivergenceError
from pudet.experiment import METRICS, config_hash, dataset_hash, evaluate, run_experiment
from pudet.gradcheck import TOLERANCE, run_gradcheck
from pudet.metrics import AP_INTERPOLATION, write_results
from pudet.model import load_snapshot, save_snapshot
from pudet.scenegen import Dataset, apply_missingness, generate_scenes, load_dataset, save_dataset
from pudet.trainer import prepare_dataset, run_training, write_rate_curves

log = logging.getLogger("pudet")

OUT_ENV = "PUDET_OUT_DIR"
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _shared(p, out_help="output directory"):
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--seed", type=int, help="override the relevant seed")
    p.add_argument("--out", type=Path, help=out_help)
    p.add_argument("--jobs", type=int, default=None, help="worker processes")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pudet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic scene dataset")
    _shared(p, "dataset file to write")

    p = sub.add_parser("train", help="train a classifier on a dataset")
    _shared(p)
    p.add_argument("--dataset", type=Path, required=True)

    p = sub.add_parser("evaluate", help="score a model snapshot on a dataset")
    _shared(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--metrics", help=f"comma list from {','.join(METRICS)}")

    p = sub.add_parser("experiment", help="run the PN / Full-PN / PU grid")
    _shared(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _shared(p)
    p.add_argument("--h", type=float, default=1e-6, help="central-difference step")
    p.add_argument("--configs", type=int, default=100, help="random cases per architecture and mode")
    return parser


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _out_path(args, default: str) -> Path:
    env = os.environ.get(OUT_ENV)
    if env:
        log.warning("output directory overridden by %s=%s", OUT_ENV, env)
        base = Path(env)
        return base / default if args.command == "generate" else base
    if args.out is not None:
        return args.out
    return Path(default)


def cmd_generate(args) -> int:
    overrides = _overrides(args)
    if args.seed is not None:
        overrides["world.seed"] = str(args.seed)
    cfg = load_config(args.config, overrides)
    scenes = generate_scenes(cfg.world, cfg.dataset.n_scenes)
    spec = cfg.missingness
    if spec.rho > 0 or spec.mode == "per-image":
        rng = np.random.default_rng([cfg.world.seed, 21])
        scenes = apply_missingness(scenes, spec, rng)
    dataset = Dataset(cfg.world, scenes, spec)
    path = _out_path(args, "dataset.jsonl")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, path)
    print(f"wrote {path}: {len(scenes)} scenes, {dataset.n_objects} objects, {dataset.n_labeled} labeled")
    return 0


def cmd_train(args) -> int:
    overrides = _overrides(args)
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    cfg = load_config(args.config, overrides)
    dataset = load_dataset(args.dataset)
    if not dataset.scenes:
        raise ConfigurationError("dataset has no scenes")
    out = _out_path(args, "train_out")
    out.mkdir(parents=True, exist_ok=True)
    result = run_training(dataset, cfg.train)
    save_snapshot(result.model, out / "model.txt")
    result.log.write_csv(out / "train_log.csv")
    write_rate_curves(result.tracker, out / "forgetting.csv")
    (out / "config.txt").write_text(dump_config(cfg))
    (out / "provenance.txt").write_text(f"dataset {args.dataset}\ndataset_hash {dataset_hash(dataset)}\n")
    print(f"trained {len(result.log.records)} steps -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    metric_spec = cfg.metrics
    if args.metrics is not None:
        names = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
        if not names:
            raise UsageError("--metrics is empty; choose from " + ",".join(METRICS))
        metric_spec = replace(metric_spec, metrics=names)
    model = load_snapshot(args.model)
    dataset = load_dataset(args.dataset)
    if model.input_dim != dataset.world.feature_dim:
        raise ConfigurationError(
            f"model expects {model.input_dim} features, dataset world has {dataset.world.feature_dim}"
        )
    prepared = prepare_dataset(dataset, cfg.train.detect_iou)
    results = evaluate(model, prepared, metric_spec)
    out = _out_path(args, "eval_out")
    out.mkdir(parents=True, exist_ok=True)
    write_results(
        results,
        out / "results.csv",
        {"ap_interpolation": AP_INTERPOLATION, "dataset_hash": dataset_hash(dataset)},
    )
    for res in results:
        for metric, thr, val in res.rows():
            print(f"{metric}\t{thr:g}\t{val:.6f}")
    return 0


def cmd_experiment(args) -> int:
    overrides = _overrides(args)
    if args.seed is not None:
        overrides["world.seed"] = str(args.seed)
    cfg = load_config(args.config, overrides)
    spec = cfg.experiment_spec()
    out = _out_path(args, "experiment_out")
    rows, failures = run_experiment(spec, out, args.jobs)
    print(f"{len(rows)} result rows, {len(failures)} failed cells, config {config_hash(spec)} -> {out}")
    for cell, err in failures:
        print(f"FAILED {cell.label}: {err}")
    return EXIT_RUNTIME if failures else 0


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    cases = run_gradcheck(args.configs, args.h, seed)
    worst = max(c.error for c in cases)
    failed = [c for c in cases if not c.passed]
    for c in failed[:20]:
        print(f"FAIL {c}")
    by_pair = {}
    for c in cases:
        by_pair.setdefault((c.architecture, c.mode), []).append(c.error)
    for (arch, mode), errs in by_pair.items():
        print(f"{arch:14s} {mode:13s} n={len(errs):4d} max_rel_err={max(errs):.3e}")
    n_clamped = sum(c.clamp_active for c in cases)
    print(f"clamp-active nn_pu cases: {n_clamped}")
    status = "PASS" if not failed else f"FAIL ({len(failed)} of {len(cases)})"
    print(f"{status} h={args.h:g} max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    return 0 if not failed else EXIT_RUNTIME


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"pudet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pudet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, InvalidInputError) as exc:
        print(f"pudet: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergenceError as exc:
        print(f"pudet: training diverged: {exc} (record: {exc.record})", file=sys.stderr)
        return EXIT_RUNTIME
    except (PudetError, OSError) as exc:
        print(f"pudet: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
