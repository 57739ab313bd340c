"""Command-line entry point.

    miniamp amp run CONFIG          streaming or offline GLM experiments
    miniamp se sweep CONFIG         state-evolution tables
    miniamp landscape scan CONFIG   replica-potential minima per batch
    miniamp phasediag CONFIG        MMSE vs Mini-AMP classification grid
    miniamp cluster run CONFIG      streaming GMM clustering
    miniamp figures {1,2,3,4}       canned desk-scale recipes

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from ..errors import ConfigError, DivergenceError, DomainError
from .config import ExperimentConfig, load_config
from .experiments import ExperimentError, rows_to_csv, rows_to_json, run_experiment, write_results

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

GLOBAL_DEFAULTS = {"seed": None, "out": None, "threads": 1, "format": "csv", "full": False}

COMMAND_KINDS = {
    ("amp", "run"): ("glm_stream", "glm_offline", "tmax_study"),
    ("se", "sweep"): ("se_sweep",),
    ("landscape", "scan"): ("landscape",),
    ("phasediag", None): ("phase_diagram",),
    ("cluster", "run"): ("cluster_stream",),
}


def figure_recipes(number, full=False):
    """{output stem: [ExperimentConfig, ...]} for one figure; each stem is one output file.

    Desk-scale recipes use fewer seeds (and for the VB baseline a smaller N)
    than ``full``.  The batch sizes are fixed choices of this package.
    """
    glm_seeds = list(range(10)) if full else list(range(3))
    if number == 1:
        return {
            "fig1_left": ExperimentConfig(kind="glm_stream", name="fig1_left", rho=0.3, delta=0.0, N=2000,
                                          alpha_b=[0.1, 0.3, 0.5, 1.0], alpha_max=3.0, seeds=glm_seeds),
            "fig1_center": [
                ExperimentConfig(kind="glm_stream", name="fig1_center", rho=0.3, delta=1e-8, N=2000,
                                 alpha_b=[0.1, 0.35, 0.5], alpha_max=3.0, seeds=glm_seeds),
                ExperimentConfig(kind="glm_stream", name="fig1_center_vb", method="vb", rho=0.3, delta=1e-8,
                                 N=2000 if full else 400, alpha_b=[0.35], alpha_max=3.0, seeds=glm_seeds),
            ],
            "fig1_right": ExperimentConfig(kind="glm_stream", name="fig1_right", prior="rademacher",
                                           channel="probit", delta=0.0, N=2000 if full else 500,
                                           alpha_b=[0.5, 1.0], alpha_max=3.0 if full else 2.0, seeds=glm_seeds),
        }
    if number == 2:
        grid = [0.1, 0.2, 0.3, 0.35, 0.4, 0.45, 0.5, 0.6] if full else [0.2, 0.35, 0.5]
        return {
            "fig2_left": ExperimentConfig(kind="landscape", name="fig2_left", rho=0.3, delta=1e-8, alpha_b=[0.35],
                                          num_batches=6),
            "fig2_right": ExperimentConfig(kind="phase_diagram", name="fig2_right", rho=0.3, delta=1e-8,
                                           alpha_b=grid, num_batches=10),
        }
    if number == 3:
        return {
            "fig3_left": ExperimentConfig(kind="cluster_stream", name="fig3_left", prior="gaussian", R=5,
                                          delta=0.1, N=1000, alpha_b=[0.2, 0.3, 0.5],
                                          num_batches=30 if full else 10,
                                          seeds=list(range(100)) if full else list(range(10))),
        }
    if number == 4:
        return {
            "fig4": ExperimentConfig(kind="tmax_study", name="fig4", rho=0.3, delta=1e-8, N=2000, alpha_b=[0.35],
                                     alpha_max=3.0, t_max_values=[2, 5, 10, None], seeds=glm_seeds),
        }
    raise ConfigError(f"unknown figure {number}")


def build_parser():
    # SUPPRESS keeps a flag given before the subcommand from being reset by
    # the subparser defaults; real defaults live in GLOBAL_DEFAULTS
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, action="append", help="override the seed list (repeatable)")
    common.add_argument("--out", help="output file, or directory for figures")
    common.add_argument("--threads", type=int, help="seeds run concurrently")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--full", action="store_true", help="full-size recipes for figures")

    parser = argparse.ArgumentParser(prog="miniamp", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, action in (("amp", "run"), ("se", "sweep"), ("landscape", "scan"), ("cluster", "run")):
        p = sub.add_parser(name, parents=[common])
        inner = p.add_subparsers(dest="action", required=True)
        q = inner.add_parser(action, parents=[common])
        q.add_argument("config")
    p = sub.add_parser("phasediag", parents=[common])
    p.add_argument("config")
    p = sub.add_parser("figures", parents=[common])
    p.add_argument("number", type=int, choices=(1, 2, 3, 4))
    return parser


def _emit(result, out, fmt):
    if out:
        directory = os.path.dirname(out)
        if directory:
            os.makedirs(directory, exist_ok=True)
        write_results(result, out, fmt)
    else:
        sys.stdout.write(rows_to_csv(result.rows) if fmt == "csv" else rows_to_json(result))


def _run(args):
    if args.command == "figures":
        out = args.out or f"fig{args.number}"
        os.makedirs(out, exist_ok=True)
        for stem, cfgs in figure_recipes(args.number, args.full).items():
            merged = None
            for cfg in cfgs if isinstance(cfgs, list) else [cfgs]:
                if args.seed:
                    cfg = dataclasses.replace(cfg, seeds=args.seed)
                result = run_experiment(cfg, threads=args.threads)
                if merged is None:
                    merged = result
                else:
                    merged.rows.extend(result.rows)
                    merged.failures.extend(result.failures)
                    merged.log.extend(result.log)
            write_results(merged, os.path.join(out, f"{stem}.{args.format}"), args.format)
        return EXIT_OK
    cfg = load_config(args.config)
    allowed = COMMAND_KINDS[(args.command, getattr(args, "action", None))]
    if cfg.kind not in allowed:
        raise ConfigError(f"experiment.kind {cfg.kind!r} cannot run under '{args.command}'; "
                          f"expected one of {', '.join(allowed)}")
    if args.seed:
        cfg = dataclasses.replace(cfg, seeds=args.seed)
    result = run_experiment(cfg, threads=args.threads)
    _emit(result, args.out, args.format)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; usage problems map to 1 here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    try:
        return _run(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, ExperimentError, DomainError, FloatingPointError, ArithmeticError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
