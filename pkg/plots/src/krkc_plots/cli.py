"""Command line front end: ``krkc-plot curves|heatmap``.

Both subcommands share the same flags; data problems exit with status 2
and a one-line message on stderr that includes the offending CSV row
when there is one.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import PlotSpec, plot_accuracy_heatmap, plot_incremental_curves
from .io import METRICS, PlotDataError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="krkc-plot",
        description="Render figures from run artifacts "
                    "(accuracy_matrix.csv and metrics.json).",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, blurb in (
        ("curves", "mean accuracy over seen tasks per training step, "
                   "one line per input run"),
        ("heatmap", "annotated lower-triangular accuracy matrix of one run"),
    ):
        cmd = sub.add_parser(name, help=blurb)
        cmd.add_argument("--input", nargs="+", required=True, metavar="DIR",
                         help="run directories containing accuracy_matrix.csv")
        cmd.add_argument("--metric", choices=METRICS, default="rank1",
                         help="which score column to plot (default rank1)")
        cmd.add_argument("--out", required=True, metavar="PATH",
                         help="image file to write; format follows the extension")
        cmd.add_argument("--title", default=None,
                         help="figure title (defaults per figure kind)")
        cmd.add_argument("--dpi", type=int, default=120)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec = PlotSpec(
        inputs=tuple(Path(d) for d in args.input),
        metric=args.metric,
        out=Path(args.out),
        dpi=args.dpi,
        title=args.title,
    )
    renderers = {"curves": plot_incremental_curves, "heatmap": plot_accuracy_heatmap}
    try:
        out = renderers[args.command](spec)
    except PlotDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0
