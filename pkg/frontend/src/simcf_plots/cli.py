"""``simcf-plot quality|synth --in <csv> --out <image>``.

Exit codes: 0 success, 1 bad input (missing column, malformed CSV),
2 I/O error. The output format follows the --out extension (png, pdf, svg).
"""

from __future__ import annotations

import argparse
import sys

from .charts import ChartError, quality_figure, read_rows, synth_figure


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ChartError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="simcf-plot", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("quality", "ranking metric vs embedding dimension, one line per model"),
        ("synth", "approximation error vs training pairs, grouped by dimension"),
    ):
        sub = subs.add_parser(name, help=help_text)
        sub.add_argument("--in", dest="input", required=True, help="input CSV")
        sub.add_argument("--out", dest="output", required=True, help="output image")
        sub.add_argument("--dpi", type=int, default=150)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        rows = read_rows(args.input)
        builder = quality_figure if args.command == "quality" else synth_figure
        fig = builder(rows, path=args.input)
        fig.savefig(args.output, dpi=args.dpi)
        print(f"wrote {args.output}")
        return 0
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ChartError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
