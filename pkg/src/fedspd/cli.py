"""Command line entry point: ``fedspd run|sweep|compare``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigError, GenerationError, InvalidParameterError
from .runner import OUT_ENV, compare_runs, load_config, load_records, run_experiment, run_sweep

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE = 0, 3, 2


def _out_root(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "runs")


def _apply_seed(cfg, args):
    return cfg if args.seed is None else cfg.with_seed(args.seed)


def _cmd_run(args) -> int:
    cfg = _apply_seed(load_config(args.config), args)
    out = _out_root(args)
    record = run_experiment(cfg, out, resume=args.resume, checkpoint_every=args.checkpoint_every)
    print(f"{record.algorithm}: {record.status} after {len(record.rows)} rounds -> {out}")
    if record.status != "ok":
        print(f"error: {record.error}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _apply_seed(load_config(args.config), args)
    if args.checkpoint_every is not None:
        from dataclasses import replace
        cfg = replace(cfg, run=replace(cfg.run, checkpoint_every=args.checkpoint_every))
    records = run_sweep(cfg, _out_root(args), jobs=args.jobs)
    bad = [r for r in records if r.status != "ok"]
    print(f"{len(records)} runs, {len(bad)} diverged -> {_out_root(args)}")
    return EXIT_DIVERGED if bad else EXIT_OK


def _cmd_compare(args) -> int:
    records = load_records(args.dir)
    table = compare_runs(records)
    sys.stdout.write(table)
    Path(args.dir, "compare.csv").write_text(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedspd", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        s = sub.add_parser(name)
        s.add_argument("config", help="JSON experiment config")
        s.add_argument("--seed", type=int, help="override run.seed")
        s.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
        s.add_argument("--checkpoint-every", type=int, help="write a snapshot every K rounds")
    sub.choices["run"].add_argument("--resume", metavar="SNAPSHOT", help="continue from a checkpoint .npz")
    sub.choices["sweep"].add_argument("--jobs", type=int, default=1, help="cells run concurrently")
    c = sub.add_parser("compare")
    c.add_argument("dir", help="directory searched recursively for record.json files")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return {"run": _cmd_run, "sweep": _cmd_sweep, "compare": _cmd_compare}[args.command](args)
    except (ConfigError, InvalidParameterError, GenerationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
