"""Command line entry point: ``rllab run``, ``rllab plot`` and ``rllab ldlr``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import RllabError
from .experiments import fields_for, load_config, rows_to_csv, run_experiment
from .ldlr import LdlrParams, ldlr_norm_squared
from .plotting import PlotSpec, plot_csv


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    rows = run_experiment(cfg)
    text = rows_to_csv(rows, fields_for(cfg.kind))
    out = args.output or cfg.output.get("csv")
    if out:
        Path(out).write_bytes(text.encode())
    else:
        sys.stdout.write(text)
    svg = cfg.output.get("svg")
    if svg and out and cfg.kind == "slr_comparison":
        plot_csv(out, PlotSpec(x="m", y="prediction_error", group="method", logy=True), svg)
    return 0


def _cmd_plot(args: argparse.Namespace) -> int:
    spec = PlotSpec(
        x=args.x,
        y=args.y,
        group=args.group,
        logx=args.logx,
        logy=args.logy,
        title=args.title or "",
        aggregate=args.aggregate,
    )
    plot_csv(args.csv, spec, args.output)
    return 0


def _cmd_ldlr(args: argparse.Namespace) -> int:
    params = LdlrParams(n=args.n, k=args.k, beta=args.beta, m=args.m, degree=args.degree)
    print(repr(ldlr_norm_squared(params)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rllab", description="Rescaled Lasso experiments and sparse PCA tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment described by a TOML config")
    run.add_argument("config")
    run.add_argument("-o", "--output", help="CSV path (defaults to output.csv in the config, else stdout)")
    run.set_defaults(func=_cmd_run)

    plot = sub.add_parser("plot", help="draw an SVG line plot from a CSV table")
    plot.add_argument("csv")
    plot.add_argument("--x", required=True)
    plot.add_argument("--y", required=True)
    plot.add_argument("--group")
    plot.add_argument("--logx", action="store_true")
    plot.add_argument("--logy", action="store_true")
    plot.add_argument("--title")
    plot.add_argument("--aggregate", choices=["median", "mean", "none"], default="median")
    plot.add_argument("-o", "--output", required=True)
    plot.set_defaults(func=_cmd_plot)

    ldlr = sub.add_parser("ldlr", help="squared norm of the low-degree likelihood ratio")
    ldlr.add_argument("--n", type=int, required=True)
    ldlr.add_argument("--k", type=int, required=True)
    ldlr.add_argument("--m", type=int, required=True)
    ldlr.add_argument("--beta", type=float, required=True)
    ldlr.add_argument("--degree", type=int, required=True)
    ldlr.set_defaults(func=_cmd_ldlr)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RllabError as exc:
        print(f"rllab: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"rllab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
