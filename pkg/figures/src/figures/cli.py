"""Command line: figures <figure-id> --in FILE [--in FILE] --out IMAGE."""

import argparse
import sys

from .loaders import SchemaError
from .render import FIGURE_IDS, render


def _parse_range(text):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("range must be 'lo,hi'")
    return float(parts[0]), float(parts[1])


def build_parser():
    parser = argparse.ArgumentParser(
        prog="figures", description="Render simulator CSV/VTK outputs as figures"
    )
    parser.add_argument("figure_id", choices=FIGURE_IDS)
    parser.add_argument("--in", dest="inputs", action="append", required=True,
                        help="input file (repeat for multi-input figures)")
    parser.add_argument("--out", required=True, help="output image path (.png)")
    parser.add_argument("--xlim", type=_parse_range, default=None, help="'lo,hi' in axis units")
    parser.add_argument("--ylim", type=_parse_range, default=None)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        render(args.figure_id, args.inputs, args.out, xlim=args.xlim, ylim=args.ylim)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
