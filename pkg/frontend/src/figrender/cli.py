"""The ``render`` command: CSV in, figure out.

Exit codes: 0 success, 2 bad arguments or an input CSV that does not match
the published interface.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import PANELS, PlotSpec, RenderError, render

__all__ = ["build_parser", "main"]

_PAIRED = {"tva_true": "tva_fake", "tva_fake": "tva_true"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render",
        description="Draw the adjustment-sweep and spike figures from the "
                    "model CLI's CSV outputs.")
    parser.add_argument("--in", dest="input", type=Path, required=True,
                        help="input CSV")
    parser.add_argument("--in2", dest="input2", type=Path, default=None,
                        help="second CSV, drawn as the right panel with "
                             "the opposite valuation convention")
    parser.add_argument("--panel", choices=PANELS, required=True)
    parser.add_argument("--out", type=Path, required=True,
                        help="output image path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = PlotSpec(args.input, args.out, args.panel)
        second = None
        if args.input2 is not None:
            if args.panel not in _PAIRED:
                raise RenderError("--in2 pairs the two valuation "
                                  "conventions; the spike panel has no pair")
            second = PlotSpec(args.input2, args.out, _PAIRED[args.panel])
        render(spec, second)
    except RenderError as err:
        print(f"render error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
