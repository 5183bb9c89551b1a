"""Command-line entry point ``fragrate``."""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

from .errors import FragrateError
from .expcli import experiments, load_config, read_record, report, write_record
from .expcli.report import exit_status

SUBCOMMANDS = ("rates", "scale", "simulate", "verify", "report")
FORCED_KIND = {"rates": "rates-table", "scale": "scale-table"}


def _parser():
    ap = argparse.ArgumentParser(prog="fragrate", description="Rates, scale functions and simulation of "
                                 "homogeneous fragmentations.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", action="append", default=[], metavar="PATH",
                    help="experiment configuration (repeatable for verify)")
    ap.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
    ap.add_argument("--out", default=None, metavar="DIR", help="override [output] dir")
    return ap


def _load(path, args):
    cfg = load_config(path)
    if args.seed is not None:
        cfg = cfg.replace("experiment", seed=args.seed)
    if args.subcommand in FORCED_KIND:
        cfg = cfg.replace("experiment", kind=FORCED_KIND[args.subcommand])
    return cfg


def _out_dir(cfg, args):
    return args.out or cfg["output"]["dir"]


def _report(args):
    dirs = [args.out] if args.out else [load_config(p)["output"]["dir"] for p in args.config] or ["results"]
    paths = sorted({p for d in dirs for p in glob.glob(os.path.join(d, "*.json"))
                    if not os.path.basename(p).startswith("report")})
    records = []
    for p in paths:
        try:
            records.append(read_record(p))
        except (KeyError, TypeError, json.JSONDecodeError):
            continue
    text, data = report(records)
    sys.stdout.write(text)
    out = dirs[0]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
    return exit_status(records)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.subcommand == "report":
            return _report(args)
        if not args.config:
            raise FragrateError("--config is required")
        configs = args.config if args.subcommand == "verify" else args.config[:1]
        records = []
        for path in configs:
            cfg = _load(path, args)
            rec = experiments.simulate_record(cfg) if args.subcommand == "simulate" else experiments.run(cfg)
            js, csv_path = write_record(rec, _out_dir(cfg, args), cfg["output"]["prefix"])
            records.append(rec)
            sys.stderr.write(f"wrote {js}" + (f" and {csv_path}" if csv_path else "") + "\n")
        text, _ = report(records)
        sys.stdout.write(text)
        return 0 if args.subcommand == "simulate" else exit_status(records)
    except (FragrateError, OSError, ValueError, ImportError) as exc:
        sys.stderr.write(f"fragrate: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
