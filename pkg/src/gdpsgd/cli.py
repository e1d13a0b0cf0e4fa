"""Command line entry point: ``gdpsgd run | compare | spectra | presets``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
from pathlib import Path

from . import harness
from .errors import GdpsgdError
from .metrics import read_csv


def _config(args):
    if args.config:
        cfg = harness.load_config(args.config)
    else:
        cfg = harness.preset(args.preset)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    updates = {}
    if getattr(args, "rounds", None) is not None:
        updates["rounds"] = args.rounds
    if getattr(args, "method", None) is not None:
        updates["method"] = args.method
    if getattr(args, "out", None) is not None:
        updates["output"] = str(args.out)
    return dataclasses.replace(cfg, **updates).validate() if updates else cfg.validate()


def _records(path):
    p = Path(path)
    if p.is_dir():
        p = p / "metrics.csv"
    return read_csv(p)


def _summary_line(records):
    net = harness.network_rows(records)
    if not net:
        return "no network-wide rows"
    last = net[-1]
    return (f"round {last.round}: mean acc {last.mean_accuracy:.4f} "
            f"(min {last.min_accuracy:.4f}, max {last.max_accuracy:.4f}), "
            f"f1 {last.macro_f1:.4f}, loss {last.loss:.4f}, wall_step {last.wall_step}")


def cmd_run(args) -> int:
    cfg = _config(args)
    records = harness.run_experiment(cfg)
    print(f"{cfg.method} {len(records)} records")
    print(_summary_line(records))
    if cfg.output:
        print(f"wrote {cfg.output}")
    return 0


def cmd_compare(args) -> int:
    summary = harness.compare_runs(_records(args.run_a), _records(args.run_b), args.threshold)
    print(harness.format_comparison(summary))
    return 0


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def cmd_spectra(args) -> int:
    cfg = _config(args)
    rows = harness.spectra(cfg, epsilon=args.epsilon)
    out = open(args.out_csv, "w", newline="") if args.out_csv else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(harness.SPECTRA_FIELDS)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in harness.SPECTRA_FIELDS])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_presets(args) -> int:
    for name in sorted(harness.PRESETS):
        cfg = harness.PRESETS[name]
        alpha = cfg.partition.alpha if cfg.partition.alpha is not None else "-"
        print(f"{name:14s} devices={cfg.field.device_count:<4d} range={cfg.field.comm_range:<6g} "
              f"partition={cfg.partition.mode} alpha={alpha} clustering={cfg.clustering.criterion}")
    return 0


def _add_source(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(harness.PRESETS))
    src.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gdpsgd", description="Bilayer gossip D-PSGD simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    _add_source(run)
    run.add_argument("--method", choices=harness.METHODS)
    run.add_argument("--out", type=Path, help="directory for metrics.csv and reports")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="compare two finished runs")
    cmp_.add_argument("run_a", help="run directory or metrics CSV")
    cmp_.add_argument("run_b", help="run directory or metrics CSV")
    cmp_.add_argument("--threshold", type=float,
                      help="accuracy threshold (default: 95%% of the lower plateau)")
    cmp_.set_defaults(func=cmd_compare)

    spec = sub.add_parser("spectra", help="topology-only spectral sweep")
    _add_source(spec)
    spec.add_argument("--epsilon", type=float, default=1e-3)
    spec.add_argument("--out-csv", type=Path)
    spec.set_defaults(func=cmd_spectra)

    pre = sub.add_parser("presets", help="list built-in presets")
    pre.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GdpsgdError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
