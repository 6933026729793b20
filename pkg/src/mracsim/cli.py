"""Command-line interface.

Subcommands:
    run      - integrate a scenario, write trace.csv (and optionally a plot
               script) into --out, print the scenario metrics
    gains    - solve and print the ideal model-matching gains for a config
    validate - check every load-time invariant of a config

Exit codes: 0 success, 2 invalid configuration, 3 integration fault,
4 model-matching assumption violated.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .closed_loop import ideal_gains
from .config import load_config
from .errors import AssumptionViolation, ConfigError, IntegrationFault
from .sim import emit_csv, emit_plot_script, run_scenario, scenario_gains

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAULT = 3
EXIT_ASSUMPTION = 4


def _fmt_matrix(mat) -> str:
    mat = np.atleast_2d(mat)
    return "\n".join("  [" + "  ".join(format(v, ".12g") for v in row) + "]" for row in mat)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mracsim", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="integrate a scenario and write its trace")
    run_p.add_argument("--config", required=True, help="scenario configuration file")
    run_p.add_argument("--out", default=".", help="output directory (default: current)")
    run_p.add_argument("--dt", type=float, help="override integration step, s")
    run_p.add_argument("--t-end", type=float, help="override simulation horizon, s")
    run_p.add_argument("--decimate", type=int, help="override record decimation")
    run_p.add_argument("--emit-plots", action="store_true",
                       help="also write a plot script next to the CSV")

    gains_p = sub.add_parser("gains", help="print the ideal model-matching gains")
    gains_p.add_argument("--config", required=True)

    val_p = sub.add_parser("validate", help="check load-time invariants of a config")
    val_p.add_argument("--config", required=True)
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.dt is not None:
        overrides["dt"] = args.dt
    if args.t_end is not None:
        overrides["t_end"] = args.t_end
    if args.decimate is not None:
        overrides["decimate"] = args.decimate
    if overrides:
        config = config.with_overrides(**overrides)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "trace.csv")
    try:
        trace, metrics = run_scenario(config)
    except IntegrationFault as exc:
        print(f"integration fault: {exc}", file=sys.stderr)
        if exc.partial_trace is not None and exc.partial_trace.records:
            emit_csv(exc.partial_trace, csv_path)
            print(f"partial trace written to {csv_path}", file=sys.stderr)
        return EXIT_FAULT
    emit_csv(trace, csv_path)
    print(f"trace: {csv_path} ({trace.records} records)")
    if args.emit_plots:
        gains = scenario_gains(config)
        script_path = os.path.join(args.out, "plot_trace.py")
        emit_plot_script(trace, script_path, csv_name="trace.csv",
                         ideal_nd=gains.n_d if gains is not None else None)
        print(f"plot script: {script_path}")
    for name, value in vars(metrics).items():
        print(f"{name} = {value}")
    return EXIT_OK


def _cmd_gains(args) -> int:
    config = load_config(args.config)
    gains = ideal_gains(config.plant(), config.reference())
    print("feedback gain kx:")
    print(_fmt_matrix(gains.k_x))
    print("feedforward gain kr:")
    print(_fmt_matrix(gains.k_r))
    print("inverse feedforward gain:")
    print(_fmt_matrix(gains.k_r_inv))
    print("adjugate of inverse feedforward gain:")
    print(_fmt_matrix(gains.n_a))
    print(f"determinant of inverse feedforward gain: {gains.n_d:.12g}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    load_config(args.config)
    print("configuration valid")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "gains": _cmd_gains, "validate": _cmd_validate}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionViolation as exc:
        print(f"assumption violation: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION


if __name__ == "__main__":
    raise SystemExit(main())
