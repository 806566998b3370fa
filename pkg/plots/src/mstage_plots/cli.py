"""One command-line script per figure kind.

Each script takes the input CSV(s), a required vector output path, and
optional axis labels.  Schema mismatches exit with status 1 and print the
column diff on stderr.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from .render import FigureSpec, SchemaError, render


def _run(kind: str, argv: Optional[List[str]]) -> int:
    parser = argparse.ArgumentParser(
        prog=f"mstage-plot-{kind.replace('_', '-')}",
        description=f"render a {kind} figure from evaluation CSV data")
    parser.add_argument("inputs", nargs="+", help="input CSV file(s)")
    parser.add_argument("--out", required=True,
                        help="output image path (.svg or .pdf)")
    parser.add_argument("--title")
    parser.add_argument("--xlabel")
    parser.add_argument("--ylabel")
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec(args.inputs, kind, args.out, args.title,
                          args.xlabel, args.ylabel)
        out = render(spec)
    except SchemaError as exc:
        sys.stderr.write(f"schema error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"io error: {exc}\n")
        return 1
    sys.stdout.write(f"wrote {out}\n")
    return 0


def main_rates(argv: Optional[List[str]] = None) -> int:
    return _run("rates", argv)


def main_are(argv: Optional[List[str]] = None) -> int:
    return _run("are", argv)


def main_ratio_sweep(argv: Optional[List[str]] = None) -> int:
    return _run("ratio_sweep", argv)


def main_robustness(argv: Optional[List[str]] = None) -> int:
    return _run("robustness", argv)


if __name__ == "__main__":
    sys.exit(_run(sys.argv[1], sys.argv[2:]))
