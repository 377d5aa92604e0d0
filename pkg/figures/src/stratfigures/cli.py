"""Command-line front end for the figure builders."""

from __future__ import annotations

import argparse
import sys

from .figures import BUILDERS, FigureInputError, FigureSpec, make_figure


def _pairs(values):
    out = []
    for item in values:
        kappa, path = item.split("=", 1)
        out.append((float(kappa), path))
    return out


def build_parser():
    p = argparse.ArgumentParser(
        prog="stratsample-figures",
        description="render plots from stratsample analyze/summary output")
    sub = p.add_subparsers(dest="figure", required=True)

    f = sub.add_parser("parabola-fractions")
    f.add_argument("--fractions", required=True,
                   help="analyze fractions JSON with --histogram x")
    f.add_argument("--out", required=True)

    f = sub.add_parser("trimer-law")
    f.add_argument("--point", action="append", required=True,
                   metavar="KAPPA=FRACTIONS.JSON")
    f.add_argument("--angle-histogram", required=True,
                   help="analyze fractions JSON with --histogram theta")
    f.add_argument("--out", required=True)

    f = sub.add_parser("polymer-bonds")
    f.add_argument("--reweight", required=True,
                   help="analyze reweight JSON with a kappa grid")
    f.add_argument("--bd-summary", default=None)
    f.add_argument("--out", required=True)

    f = sub.add_parser("octahedron-yield")
    f.add_argument("--reweight", required=True,
                   help="analyze reweight JSON with a typed-kappa grid")
    f.add_argument("--out", required=True)

    f = sub.add_parser("wall-adsorption")
    f.add_argument("--point", action="append", required=True,
                   metavar="KAPPA0=REWEIGHT.JSON")
    f.add_argument("--out", required=True)
    return p


def spec_from_args(args) -> FigureSpec:
    if args.figure == "parabola-fractions":
        inputs = {"fractions": args.fractions}
    elif args.figure == "trimer-law":
        inputs = {"fractions_by_kappa": _pairs(args.point),
                  "angle_histogram": args.angle_histogram}
    elif args.figure == "polymer-bonds":
        inputs = {"reweight": args.reweight, "bd_summary": args.bd_summary}
    elif args.figure == "octahedron-yield":
        inputs = {"reweight": args.reweight}
    else:
        inputs = {"wall_by_kappa": _pairs(args.point)}
    return FigureSpec(figure=args.figure, inputs=inputs, output=args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        path = make_figure(spec_from_args(args))
    except FigureInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
