"""Command line entry points: train, eval, gradcheck, toy-imbalance.

Flags may also come from the environment with prefix EMBEDLAB_ (SEED, OUT,
QUIET); explicit flags win over the environment, which wins over the config.
Exit codes: 0 success, 2 configuration problem, 3 numeric failure during
training (the message names the epoch and batch).
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .gradcheck import PASS_TOL, run_gradcheck
from .runner import execute_experiment
from .study import run_toy_imbalance
from .training import NumericFailure

ENV_PREFIX = "EMBEDLAB_"


def _env(name: str):
    return os.environ.get(ENV_PREFIX + name)


def _resolve_seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    raw = _env("SEED")
    return int(raw) if raw is not None else None


def _resolve_out(args) -> str | None:
    return args.out if args.out is not None else _env("OUT")


def _resolve_quiet(args) -> bool:
    if args.quiet:
        return True
    raw = _env("QUIET")
    return raw is not None and raw.lower() in ("1", "true", "yes")


def _load(args):
    cfg = load_config(args.config)
    seed = _resolve_seed(args)
    if seed is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=seed))
    return cfg


def _console(quiet: bool):
    return None if quiet else (lambda msg: print(msg))


def cmd_train(args) -> int:
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = _resolve_out(args)
    if out is None:
        print("no output directory (use --out or EMBEDLAB_OUT)", file=sys.stderr)
        return 2
    try:
        execute_experiment(cfg, out, log=_console(_resolve_quiet(args)))
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


def cmd_eval(args) -> int:
    """Re-evaluate an existing run directory from its checkpoint."""
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = _resolve_out(args)
    if out is None or not (Path(out) / "checkpoint.json").exists():
        print("no checkpoint.json in the output directory", file=sys.stderr)
        return 2
    from .centers import bank_from_doc
    from .evaluation import write_report
    from .model import load_checkpoint
    from .training import (TrainResult, derive_streams, evaluate_experiment,
                           prepare_data, write_embeddings_csv)

    ck = load_checkpoint(Path(out) / "checkpoint.json")
    bank = None if ck["bank"] is None else bank_from_doc(ck["bank"])
    result = TrainResult(params=ck["params"], head=ck["head"], bank=bank)
    streams = derive_streams(cfg.train.seed)
    train_ds, test_ds = prepare_data(cfg, streams)
    report, E_test = evaluate_experiment(cfg, result, train_ds, test_ds,
                                         meta={"loss": cfg.loss.kind,
                                               "seed": cfg.train.seed,
                                               "reevaluated": True})
    write_embeddings_csv(Path(out) / "embeddings.csv", E_test, test_ds.labels)
    write_report(report, Path(out) / "report.json")
    if not _resolve_quiet(args):
        print(f"map={report.map:.4f}  vr={report.vr_at_far}")
    return 0


def cmd_gradcheck(args) -> int:
    seed = _resolve_seed(args)
    results = run_gradcheck(seed=0 if seed is None else seed,
                            name_filter=args.losses, points=args.points,
                            perturb=args.perturb)
    if not results:
        print(f"no losses match filter {args.losses!r}", file=sys.stderr)
        return 2
    ok = True
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<22} max_rel_err={r.max_rel_err:.3e}  "
              f"({r.points} points)  {status}")
        ok = ok and r.passed
    print(f"tolerance {PASS_TOL:.0e}: {'all passed' if ok else 'FAILURES'}")
    return 0 if ok else 1


def cmd_toy_imbalance(args) -> int:
    out = _resolve_out(args)
    if out is None:
        print("no output directory (use --out or EMBEDLAB_OUT)", file=sys.stderr)
        return 2
    seed = _resolve_seed(args)
    try:
        summary = run_toy_imbalance(out, seed=7 if seed is None else seed,
                                    margin_m=args.margin_m,
                                    log=_console(_resolve_quiet(args)))
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0 if all(summary["checks"].values()) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="embedlab",
                                description="embedding-loss experiments and checks")
    sub = p.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train per a config and write artifacts")
    train.add_argument("--config", required=True)
    train.add_argument("--seed", type=int, default=None, help="override config seed")
    train.add_argument("--out", default=None, help="artifact directory")
    train.add_argument("--quiet", action="store_true")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="re-evaluate an existing checkpoint")
    ev.add_argument("--config", required=True)
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--out", default=None, help="run directory with checkpoint.json")
    ev.add_argument("--quiet", action="store_true")
    ev.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gc.add_argument("--seed", type=int, default=None)
    gc.add_argument("--losses", default=None, help="substring filter on loss names")
    gc.add_argument("--points", type=int, default=100)
    gc.add_argument("--perturb", action="store_true",
                    help="self-test hook: corrupt gradients to force a failure")
    gc.add_argument("--out", default=None, help=argparse.SUPPRESS)
    gc.add_argument("--quiet", action="store_true")
    gc.set_defaults(func=cmd_gradcheck)

    toy = sub.add_parser("toy-imbalance",
                         help="softmax/center x balanced/imbalanced quadrant study")
    toy.add_argument("--out", default=None)
    toy.add_argument("--seed", type=int, default=None)
    toy.add_argument("--margin-m", type=int, default=4,
                     help="angular margin m for the center runs")
    toy.add_argument("--quiet", action="store_true")
    toy.set_defaults(func=cmd_toy_imbalance)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
