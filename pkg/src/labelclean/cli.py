"""Command-line entry point.

Subcommands:
  experiment <config.json>   run the configured comparison, write reports
  clean <config.json>        one cleaning run with the simulated oracle, export trace
  serve                      start the annotation HTTP service
  corrupt <csv>              emit a label-corrupted copy of a CSV for inspection

Configs are the source of truth; flags only override. Exit codes: 0 success,
1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import data as data_mod
from . import evalx, service
from .cleaning import oracle_annotator, run_loop
from .data import CorruptionSpec, CsvSchema
from .errors import ConfigurationError, LabelCleanError, ParseError

log = logging.getLogger("labelclean")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelclean",
                                     description="interactive label cleaning")
    parser.add_argument("--log-level",
                        default=os.environ.get("LABELCLEAN_LOG_LEVEL", "INFO"))
    sub = parser.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("experiment", help="run an experiment config")
    p_exp.add_argument("config", help="path to a JSON experiment config")
    p_exp.add_argument("--output-dir", default=None, help="override the config output dir")

    p_clean = sub.add_parser("clean", help="single cleaning run with trace export")
    p_clean.add_argument("config", help="path to a JSON experiment config")
    p_clean.add_argument("--annotator", choices=["oracle"], default="oracle")
    p_clean.add_argument("--output-dir", default=None)

    p_serve = sub.add_parser("serve", help="start the annotation HTTP service")
    p_serve.add_argument("--addr", default=os.environ.get("LABELCLEAN_ADDR", "127.0.0.1:8000"),
                         help="host:port to bind")
    p_serve.add_argument("--data", action="append", required=True,
                         help="dataset manifest JSON (repeatable)")

    p_corrupt = sub.add_parser("corrupt", help="emit a corrupted copy of a CSV")
    p_corrupt.add_argument("csv", help="input CSV path")
    p_corrupt.add_argument("--rate", type=float, default=0.2)
    p_corrupt.add_argument("--seed", type=int, default=0)
    p_corrupt.add_argument("--label-column", default="label")
    p_corrupt.add_argument("--out", default=None, help="output path (default: <csv>.corrupted.csv)")
    return parser


def _cmd_experiment(args: argparse.Namespace) -> int:
    cfg = evalx.load_config(args.config)
    if args.output_dir:
        from dataclasses import replace
        cfg = replace(cfg, output_dir=args.output_dir)
    paths = evalx.run_experiment(cfg)
    for kind, path in sorted(paths.items()):
        print(f"{kind}: {path}")
    return 0


def _cmd_clean(args: argparse.Namespace) -> int:
    cfg = evalx.load_config(args.config)
    out_dir = Path(args.output_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.strategies:
        name, strategy = cfg.strategies[0]
    else:
        name, strategy = evalx.strategy_from_dict({"kind": "cincer"}, cfg.tau)
    seed = cfg.seeds[0]
    bootstrap, stream, test = evalx.prepare_run(cfg, seed)
    rows, trace = evalx.run_one(cfg, name, strategy, seed, bootstrap, stream, test)

    trace_path = out_dir / "trace.jsonl"
    trace_path.write_text(trace.to_jsonl(), encoding="utf-8")
    summary = {
        "strategy": name,
        "seed": seed,
        "iterations": len(trace),
        "queries": rows[-1].queries if rows else 0,
        "cleaned": rows[-1].cleaned_total if rows else 0,
        "cleaned_ce": rows[-1].cleaned_counterexamples if rows else 0,
        "useless_queries": rows[-1].useless_queries if rows else 0,
        "final_f1": rows[-1].f1 if rows else None,
    }
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
    print(f"trace: {trace_path}")
    print(f"summary: {summary_path}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    host, _, port = args.addr.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigurationError(f"--addr must look like host:port, got {args.addr!r}")
    registry = service.DatasetRegistry()
    for manifest_path in args.data:
        manifest, dataset = data_mod.load_manifest(manifest_path)
        registry.add(manifest, dataset)
        log.info("loaded dataset %s (%d examples)", manifest.name, len(dataset))
    print(f"serving on http://{host}:{port} with datasets: {', '.join(registry.names())}")
    service.serve(registry, host, int(port))
    return 0


def _cmd_corrupt(args: argparse.Namespace) -> int:
    dataset = data_mod.load_csv(args.csv, CsvSchema(label_column=args.label_column))
    corrupted = data_mod.corrupt(dataset, CorruptionSpec(rate=args.rate, seed=args.seed))
    out = Path(args.out) if args.out else Path(args.csv).with_suffix(".corrupted.csv")
    data_mod.write_csv(corrupted, out)
    flipped = sum(1 for ex in corrupted if ex.corrupted)
    print(f"wrote {out} ({flipped} of {len(corrupted)} labels corrupted)")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "experiment": _cmd_experiment,
        "clean": _cmd_clean,
        "serve": _cmd_serve,
        "corrupt": _cmd_corrupt,
    }
    try:
        return handlers[args.command](args)
    except (ConfigurationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LabelCleanError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2


if __name__ == "__main__":
    sys.exit(main())
