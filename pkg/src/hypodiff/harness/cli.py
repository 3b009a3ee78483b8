"""Command-line entry point: simulate, estimate, mc, check."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..asymptotics import confidence_intervals, gamma_blocks
from ..checks import run_check_suite
from ..errors import HypodiffError
from ..estimators import EstimatorConfig, run_adaptive
from ..model import MODELS, ThetaBlocks, get_model
from ..simulate import SamplingDesign, simulate_path
from .config import load_config
from .io import read_path_csv, write_json, write_path_csv
from .mc import run_mc

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1 instead of exiting with 2."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hypodiff", description="Adaptive quasi-likelihood estimation for degenerate diffusions.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="simulate an observed path to CSV")
    s.add_argument("--model", required=True, choices=sorted(MODELS))
    for k in (1, 2, 3):
        s.add_argument(f"--theta{k}", required=True, type=_floats)
    s.add_argument("--n", required=True, type=int)
    s.add_argument("--h", required=True, type=float)
    s.add_argument("--substeps", type=int, default=100)
    s.add_argument("--burn-in", type=float, default=100.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    e = sub.add_parser("estimate", help="run the adaptive pipeline on a path CSV")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True, choices=sorted(MODELS))
    e.add_argument("--scheme", default="BBBB")
    e.add_argument("--mh-length", type=int, default=5000)
    e.add_argument("--grid", type=int, default=None,
                   help="compute Bayes estimates by quadrature with this many points per axis")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--level", type=float, default=0.95)
    e.add_argument("--report", required=True)

    m = sub.add_parser("mc", help="Monte Carlo experiment from a TOML config")
    m.add_argument("--config", required=True)
    m.add_argument("--out-rows")
    m.add_argument("--out-summary")

    c = sub.add_parser("check", help="run model validation and algebraic invariant checks")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--report")
    return p


def _require_file(path: str) -> Path:
    f = Path(path)
    if not f.is_file():
        raise UsageError(f"file not found: {path}")
    return f


def cmd_simulate(args) -> int:
    model = get_model(args.model)
    theta = ThetaBlocks(args.theta1, args.theta2, args.theta3)
    design = SamplingDesign(n=args.n, h=args.h, substeps=args.substeps, burn_in=args.burn_in, seed=args.seed)
    path = simulate_path(model, theta, design)
    write_path_csv(path, args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    data = _require_file(args.data)
    model = get_model(args.model)
    path = read_path_csv(data)
    if path.d_X != model.dims.d_X or path.d_Y != model.dims.d_Y:
        raise UsageError(f"{data}: columns give d_X={path.d_X}, d_Y={path.d_Y}; model {model.name} "
                         f"expects {model.dims.d_X}, {model.dims.d_Y}")
    kw = {"mh_length": args.mh_length, "seed": args.seed}
    if args.grid is not None:
        kw.update(qbe_method="quad", quad_grid=args.grid, quad_grid_2d=args.grid)
    report = run_adaptive(path, model, args.scheme, config=EstimatorConfig(**kw))
    gam = gamma_blocks(path, model, report.final)
    report.gammas = gam.to_dict()
    try:
        report.cis = confidence_intervals(report, gam, args.level)
    except HypodiffError as exc:
        report.cis = {"error": str(exc)}
    write_json(report.to_dict(), args.report)
    return EXIT_OK


def cmd_mc(args) -> int:
    cfg = load_config(_require_file(args.config))
    if args.out_rows:
        cfg.out_rows = args.out_rows
    if args.out_summary:
        cfg.out_summary = args.out_summary
    res = run_mc(cfg)
    for s in res.summary:
        print(f"{s['estimator']}.{s['coord']}\tmean={s['mean']:.6g}\tsd={s['sd']:.3g}\tn_ok={s['n_ok']}")
    for msg in res.flags.values():
        print(f"note: {msg}", file=sys.stderr)
    return EXIT_OK


def cmd_check(args) -> int:
    res = run_check_suite(seed=args.seed)
    for name, part in res.items():
        if isinstance(part, dict):
            print(f"{name}: {'ok' if part['passed'] else 'FAILED'}")
    if args.report:
        write_json(json.loads(json.dumps(res, default=_np_default)), args.report)
    if not res["passed"]:
        print("check suite failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _np_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


_COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "mc": cmd_mc, "check": cmd_check}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"hypodiff {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HypodiffError, ValueError, OSError) as exc:
        print(f"hypodiff {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(cli_main())
