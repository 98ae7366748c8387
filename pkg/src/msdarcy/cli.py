"""Command-line interface: run, fine-solve, gen-field, report.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from . import experiment, fields
from .config import load_config
from .errors import ConfigError, SolverError


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg.validate()


def _cmd_run(args):
    cfg = _load(args)
    experiment.run_experiment(cfg, out_dir=cfg.out_dir, config_path=args.config)
    return 0


def _cmd_fine_solve(args):
    cfg = _load(args)
    if args.manufactured:
        ratio = experiment.manufactured_ratio(cfg.T, cfg.n, lumped=cfg.lumped_mass)
        print(f"manufactured-solution a-norm error ratio (h vs h/2): {ratio:.4f}")
        return 0
    experiment.run_fine_solve(cfg, out_dir=cfg.out_dir)
    return 0


def _cmd_gen_field(args):
    if args.config:
        cfg = load_config(args.config)
        kind = args.kind or cfg.generator
        contrast = args.contrast if args.contrast is not None else cfg.contrast
        seed = args.seed if args.seed is not None else cfg.seed
        rows = args.rows or cfg.T * cfg.n
        cols = args.cols or cfg.T * cfg.n
    else:
        if args.rows is None or args.cols is None:
            raise ConfigError("gen-field needs --rows and --cols (or --config)")
        kind = args.kind or "channels"
        contrast = args.contrast if args.contrast is not None else 1e4
        seed = args.seed if args.seed is not None else 0
        rows, cols = args.rows, args.cols
    perm = fields.gen_field(kind, contrast, seed, (rows, cols))
    fields.save_raster(args.out, perm.values)
    print(f"wrote {rows}x{cols} '{kind}' field (contrast {contrast:g}, "
          f"seed {seed}) to {args.out}")
    return 0


def _cmd_report(args):
    table = experiment.report(args.run_dirs)
    print(table, end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="msdarcy",
        description="Multiscale mixed Darcy solver with online enrichment")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--workers", type=int, help="worker processes cap")
        p.add_argument("--seed", type=int, help="field seed (overrides config)")

    p = sub.add_parser("run", help="offline build plus online enrichment")
    common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("fine-solve", help="fine-scale reference solve only")
    common(p)
    p.add_argument("--manufactured", action="store_true",
                   help="report the convergence ratio on a closed-form case")
    p.set_defaults(func=_cmd_fine_solve)

    p = sub.add_parser("gen-field", help="write a synthetic permeability raster")
    p.add_argument("--config", help="pull defaults from a config file")
    p.add_argument("--kind", choices=["uniform", "inclusions", "channels", "layered"])
    p.add_argument("--contrast", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--out", required=True, help="raster output path")
    p.set_defaults(func=_cmd_gen_field)

    p = sub.add_parser("report", help="markdown table and decay data from runs")
    p.add_argument("run_dirs", nargs="+", help="one or two run directories")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2
    except (SolverError, ArithmeticError) as e:
        print(f"error: numerical: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
