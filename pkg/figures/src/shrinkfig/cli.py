"""Command line: render <kind> <artifact...> -o <path>."""

from __future__ import annotations

import argparse
import sys

from .render import FIGURE_KINDS, FigureSpec, render


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="render", description=__doc__)
    parser.add_argument("kind", choices=FIGURE_KINDS)
    parser.add_argument("artifacts", nargs="+", help="input CSV artifacts for the chosen kind")
    parser.add_argument("-o", "--output", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        result = render(FigureSpec(kind=args.kind, inputs=args.artifacts, output=args.output))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(result.path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
