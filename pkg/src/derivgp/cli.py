"""Command-line entry point: ``derivgp run|summarize|validate-kernels|condition-sweep``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import harness

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3


def _print_summary(summary: dict) -> None:
    verdicts = summary.get("verdicts", {})
    for k, v in verdicts.items():
        print(f"{k}: {v}")
    for method, entry in sorted(summary.get("methods", {}).items()):
        keys = [k for k in ("median_iterations", "mean_final_error", "mean_delta2_var")
                if k in entry]
        print(method, " ".join(f"{k}={entry[k]:.6g}" for k in keys))
    if summary.get("failures"):
        print(f"{len(summary['failures'])} failed cell(s):", file=sys.stderr)
        for cell, msg in summary["failures"].items():
            print(f"  {cell}: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    try:
        cfg = harness.load_config(args.config)
        root, summary = harness.run(cfg, args.out, args.jobs, args.resume)
    except harness.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {root}")
    _print_summary(summary)
    return EXIT_PARTIAL if summary.get("failures") else EXIT_OK


def cmd_summarize(args) -> int:
    try:
        summary = harness.summarize(args.dir)
    except harness.MissingTraces as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        _print_summary(summary)
    return EXIT_PARTIAL if summary.get("failures") else EXIT_OK


def cmd_validate(args) -> int:
    rows = harness.kernel_validation_rows(tuple(args.dim), tuple(args.family), args.points,
                                          args.t, args.cond_target, args.seed)
    path = harness.output_root(args.out) / "kernel_validation.csv"
    harness.write_csv(path, harness.VALIDATION_HEADER, rows)
    worst = max(r[5] for r in rows)
    print(f"wrote {path}; worst relative block deviation {worst:.3g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    deltas = np.logspace(np.log10(args.delta_min), np.log10(args.delta_max), args.n_deltas)
    rows = harness.condition_sweep_rows(deltas, args.points, args.spacing, args.noise_var)
    path = harness.output_root(args.out) / "condition_sweep.csv"
    harness.write_csv(path, harness.SWEEP_HEADER, rows)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="derivgp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a TOML config")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--out", default=None,
                   help=f"output root (default ${harness.OUT_ENV} or ./{harness.DEFAULT_OUT})")
    r.add_argument("--resume", action="store_true", help="only run missing (method, seed) cells")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("summarize", help="aggregate traces in a run directory")
    s.add_argument("dir")
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_summarize)

    v = sub.add_parser("validate-kernels", help="spectral vs exact kernel blocks")
    v.add_argument("--family", nargs="+", default=["se", "matern52_factorizable"],
                   choices=["se", "matern52", "matern52_factorizable"])
    v.add_argument("--dim", nargs="+", type=int, default=[1, 2, 3])
    v.add_argument("--points", type=int, default=4)
    v.add_argument("--t", type=float, default=10.0)
    v.add_argument("--cond-target", type=float, default=1e14)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default=None)
    v.set_defaults(fn=cmd_validate)

    c = sub.add_parser("condition-sweep", help="Gram condition numbers across length scales")
    c.add_argument("--delta-min", type=float, default=0.01)
    c.add_argument("--delta-max", type=float, default=10.0)
    c.add_argument("--n-deltas", type=int, default=50)
    c.add_argument("--points", type=int, default=100)
    c.add_argument("--spacing", type=float, default=0.2)
    c.add_argument("--noise-var", type=float, default=1e-6)
    c.add_argument("--out", default=None)
    c.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
