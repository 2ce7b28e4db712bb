"""Command line interface: ``viz snapshot`` and ``viz series``."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import io as vio
from . import render


def _cmd_snapshot(args):
    snap = vio.read_snapshot(args.file)
    ls = vio.read_levelset(args.levelset) if args.levelset else None
    estimates = None
    if args.estimator:
        cols = vio.read_csv(args.estimator)
        if args.t is not None:
            keep = np.isclose(cols["t"], args.t)
            cols = {k: v[keep] for k, v in cols.items()}
        estimates = cols
    render.render_snapshot(snap, args.output, levelset=ls, estimates=estimates,
                           wireframe=args.wireframe)
    return 0


def _cmd_series(args):
    report = render.render_series(args.dir, args.output)
    for name in report.missing:
        print(f"missing: {name}", file=sys.stderr)
    if not args.quiet:
        print(f"wrote {len(report.images)} images and {len(report.plots)} plots")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="viz", description="Render spinodal run outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_snap = sub.add_parser("snapshot", help="render one snapshot file")
    p_snap.add_argument("file")
    p_snap.add_argument("--levelset", default=None)
    p_snap.add_argument("--estimator", default=None)
    p_snap.add_argument("--t", type=float, default=None)
    p_snap.add_argument("--wireframe", action="store_true")
    p_snap.add_argument("-o", "--output", required=True)
    p_snap.set_defaults(func=_cmd_snapshot)

    p_series = sub.add_parser("series", help="render a whole run directory")
    p_series.add_argument("dir")
    p_series.add_argument("-o", "--output", required=True)
    p_series.add_argument("--quiet", action="store_true")
    p_series.set_defaults(func=_cmd_series)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (vio.ParseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cli_main():
    sys.exit(main())
