"""Dispatcher CLI: `plot <kind> --in FILE --out IMAGE [options]`."""

from __future__ import annotations

import argparse
import sys

import matplotlib.pyplot as plt

from .figures import FigureKind, FigureSpec, SchemaError, render

EXIT_OK = 0
EXIT_IO = 1
EXIT_SCHEMA = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plot",
                                     description="render profiling figures")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in FigureKind:
        p = sub.add_parser(kind.value)
        p.add_argument("--in", dest="source", required=True, metavar="FILE")
        p.add_argument("--out", dest="output", required=True, metavar="IMAGE")
        p.add_argument("--title")
        p.add_argument("--xlabel")
        p.add_argument("--ylabel")
        p.add_argument("--log-x", action="store_true")
        p.add_argument("--log-y", action="store_true")
        if kind is FigureKind.SCATTER:
            p.add_argument("--regions", metavar="FILE",
                           help="regions.json providing the tag bands")
        if kind is FigureKind.SENSITIVITY:
            p.add_argument("--metric", default="accuracy",
                           choices=["accuracy", "overhead", "collisions",
                                    "delivered"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    options = {k: v for k, v in (
        ("title", args.title), ("xlabel", args.xlabel), ("ylabel", args.ylabel),
        ("log_x", args.log_x), ("log_y", args.log_y),
        ("metric", getattr(args, "metric", None))) if v}
    spec = FigureSpec(kind=FigureKind(args.kind), source=args.source,
                      output=args.output,
                      regions=getattr(args, "regions", None), options=options)
    try:
        fig = render(spec)
        plt.close(fig)
    except SchemaError as exc:
        print(f"plot {args.kind}: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"plot {args.kind}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
