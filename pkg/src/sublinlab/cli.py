"""Command line: ``sublinlab run --config <file>`` and ``sublinlab list``.

Exit codes: 0 run completed (verdicts are data), 1 pipeline failure,
2 configuration error.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, bundled_names, parse_scenario
from .expressions import ExpressionError
from .geometry import GeometryError
from .runner import parse_sweep, sweep, write_run
from .weights import WeightError


def build_parser():
    ap = argparse.ArgumentParser(prog="sublinlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("--config", required=True, help="scenario file, or the name of a bundled scenario")
    r.add_argument("--out-dir", default="./out")
    r.add_argument("--resolution", type=int, default=None, help="override [grid] resolution")
    r.add_argument("--sweep", default=None, metavar="PARAM=V1,V2,...",
                   help="p, resolution, weight_scale or omega1_amplitude")
    sub.add_parser("list", help="list bundled scenarios")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print("\n".join(bundled_names()))
        return 0
    try:
        sc = parse_scenario(args.config)
        if args.resolution is not None:
            sc = sc.with_changes(resolution=args.resolution)
        if args.sweep:
            param, values = parse_sweep(args.sweep)
            sweep(sc, param, values, args.out_dir)
            print(f"{args.out_dir}/{sc.name}/sweep_{param}.csv")
            return 0
        rep, target = write_run(sc, args.out_dir)
    except (ConfigError, GeometryError, WeightError, ExpressionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"pipeline error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    verdicts = rep.sections.get("verdict", [])
    for k, v in verdicts:
        if not k.endswith(".uses"):
            print(f"{k}: {v}")
    print(target / "report.txt")
    return 0


if __name__ == "__main__":
    sys.exit(main())
