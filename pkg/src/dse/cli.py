"""``dse`` command line: run, sweep, validate, plot.

Exit codes: 0 ok, 2 config error, 3 divergence, 4 I/O.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import parse_config
from .errors import ConfigError, ContractViolation, DivergenceError, InvalidTopologyError, PartitionError
from . import harness

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    outcome = harness.run_config(cfg, args.out, force=args.force)
    for w in outcome.warnings:
        print(w, file=sys.stderr)
    last = outcome.result.rows[-1]
    print(f"csv         {outcome.csv_path}")
    print(f"checkpoint  {outcome.checkpoint_path}")
    print(f"final t={last.t} loss={last.loss:.10g} grad_norm_sq={last.grad_norm_sq:.6g} comm_rounds={last.comm_rounds}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    spec = harness.parse_sweep(args.spec)
    summary = harness.sweep(spec, args.out, threads=args.threads, force=args.force)
    failed = [r for r in summary if r.get("status") != "ok"]
    print(f"{len(summary)} runs, {len(failed)} failed; summary in {Path(args.out) / 'summary.csv'}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = parse_config(args.config)
    sys.stdout.write(harness.validate_report(cfg))
    if args.export_w:
        harness.build_mixing(cfg).to_csv(args.export_w)
    return EXIT_OK


def _cmd_plot(args) -> int:
    log = True if args.log else (False if args.linear else None)
    out = harness.plot(args.csv, args.metric, args.out, log=log)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dse", description="Decentralized optimization simulator (DSE-MVR / DSE-SGD / DSGD / DLSGD).")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute one config")
    r.add_argument("config")
    r.add_argument("--out", default="runs", help="artifact directory (default: runs)")
    r.add_argument("--force", action="store_true", help="overwrite artifacts whose content differs")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run a grid of configs")
    s.add_argument("spec")
    s.add_argument("--out", default="sweep", help="output directory (default: sweep)")
    s.add_argument("--threads", type=int, default=None, help="worker threads (default: $DSE_THREADS or CPU count)")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=_cmd_sweep)

    v = sub.add_parser("validate", help="print theory bounds and topology checks")
    v.add_argument("config")
    v.add_argument("--export-w", metavar="CSV", help="also write the mixing matrix as CSV")
    v.set_defaults(func=_cmd_validate)

    pl = sub.add_parser("plot", help="SVG line chart of one metric column")
    pl.add_argument("csv", nargs="+")
    pl.add_argument("--metric", required=True)
    pl.add_argument("--out", required=True)
    scale = pl.add_mutually_exclusive_group()
    scale.add_argument("--log", action="store_true")
    scale.add_argument("--linear", action="store_true")
    pl.set_defaults(func=_cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidTopologyError, PartitionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
