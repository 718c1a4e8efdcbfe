"""Command-line entry point: run, plot, verify, list-models."""

import argparse
import sys

from .config import MODELS, ConfigError, parse_config
from .plotting import PlotError, emit_plot
from .verify import SUITES, run_suite


def _cmd_run(args):
    from .runner import run_experiment  # deferred: heavy imports

    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = run_experiment(cfg, output_dir=args.output, seed=args.seed)
    for o in result.orders:
        status = "ok" if o.ok else f"DIVERGED: {o.failure}"
        print(f"order {o.order:>3}: {o.rows} rows -> {o.csv_path}  [{status}]")
    for fig in result.figure_paths:
        print(f"figure: {fig}")
    print(f"manifest: {result.manifest_path}")
    return 0 if result.ok else 1


def _cmd_plot(args):
    try:
        out = emit_plot(args.csv, args.out, value=args.column,
                        logy=not args.linear_y, title=args.title)
    except (PlotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


def _cmd_verify(args):
    try:
        results = run_suite(args.suite)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    failed = 0
    for r in results:
        print(r.line())
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def _cmd_list_models(args):
    for name in MODELS:
        print(name)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pdekf",
        description="Observer experiments for semilinear reaction-diffusion "
                    "systems: run configured experiments, plot the emitted "
                    "CSVs, and execute the verification battery.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="path to the configuration file")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_run.add_argument("--output", default=None,
                       help="override the output directory")
    p_run.set_defaults(func=_cmd_run)

    p_plot = sub.add_parser("plot", help="render CSVs to an SVG figure")
    p_plot.add_argument("csv", nargs="+", help="run CSV files sharing a grid")
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.add_argument("--column", default="l2_error",
                        help="column to plot (or 'output_error' for the norm)")
    p_plot.add_argument("--linear-y", action="store_true",
                        help="linear instead of log error axis")
    p_plot.add_argument("--title", default=None)
    p_plot.set_defaults(func=_cmd_plot)

    p_verify = sub.add_parser("verify", help="run the verification battery")
    p_verify.add_argument("suite", nargs="?", default="all",
                          help=f"one of: {', '.join(sorted(SUITES))}, all")
    p_verify.set_defaults(func=_cmd_verify)

    p_list = sub.add_parser("list-models", help="list the model catalog")
    p_list.set_defaults(func=_cmd_list_models)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
