"""Command-line experiment driver.

Default action runs the full scenario matrix (3 modes x 4 loss rates x
7 penetration levels x paired seeds) and writes CSV reports. Flags can
restrict the sweep to single values; --trace additionally dumps per-run
CSV artifacts (timeline, verified store, window log, BSM deliveries,
vehicle trajectories).

Exit status: 0 on a complete matrix, 2 on an aborted sweep (the partial
dump path is printed), 1 on configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .comms import DeliveryLogger
from .config import MatrixConfig, load_config, mode_from_name
from .harness import MatrixAborted, emit_report, run_matrix, run_single
from .pipeline import (MODE_FEEDBACK_DYNAMIC, MODE_FEEDBACK_FIXED,
                       MODE_NO_FEEDBACK, VerifiedStore, write_timeline)
from .traffic import TrajectoryLogger
from .windowing import WindowLogger


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvqueue",
        description="Sweep queue-prediction scenarios and report accuracy grids.")
    parser.add_argument("--config", help="INI config file (key = value sections)")
    parser.add_argument("--loss", help="comma-separated loss rates to run")
    parser.add_argument("--penetration",
                        help="comma-separated CV penetrations to run")
    parser.add_argument("--mode", choices=["no_feedback", "feedback", "all"],
                        default=None, help="learner mode selection")
    parser.add_argument("--window", choices=["fixed", "dynamic", "both"],
                        default=None, help="feedback window policy selection")
    parser.add_argument("--seed", type=int, help="base seed for paired runs")
    parser.add_argument("--seeds", type=int, help="number of paired seeds")
    parser.add_argument("--duration", type=float,
                        help="simulated seconds per scenario")
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--trace", action="store_true",
                        help="also dump per-run CSV artifacts")
    return parser


def _select_modes(mode_arg, window_arg):
    if mode_arg in (None, "all"):
        modes = [MODE_NO_FEEDBACK, MODE_FEEDBACK_FIXED, MODE_FEEDBACK_DYNAMIC]
        if mode_arg is None and window_arg is None:
            return tuple(modes)
    if mode_arg == "no_feedback":
        return (MODE_NO_FEEDBACK,)
    feedback = {"fixed": (MODE_FEEDBACK_FIXED,),
                "dynamic": (MODE_FEEDBACK_DYNAMIC,),
                "both": (MODE_FEEDBACK_FIXED, MODE_FEEDBACK_DYNAMIC),
                None: (MODE_FEEDBACK_FIXED, MODE_FEEDBACK_DYNAMIC)}[window_arg]
    if mode_arg == "feedback":
        return feedback
    # mode=all (explicit) or unset with a window restriction
    return (MODE_NO_FEEDBACK,) + feedback


def configure(args) -> MatrixConfig:
    matrix = load_config(args.config) if args.config else MatrixConfig()
    if args.loss:
        matrix = replace(matrix, losses=tuple(float(v) for v in args.loss.split(",")))
    if args.penetration:
        matrix = replace(matrix, penetrations=tuple(
            float(v) for v in args.penetration.split(",")))
    if args.mode is not None or args.window is not None:
        matrix = replace(matrix, modes=_select_modes(args.mode, args.window))
    if args.seed is not None:
        matrix = replace(matrix, base_seed=args.seed)
    if args.seeds is not None:
        matrix = replace(matrix, n_seeds=args.seeds)
    if args.duration is not None:
        matrix = replace(matrix, template=replace(matrix.template,
                                                  duration=args.duration))
    return matrix


def _dump_traces(matrix: MatrixConfig, out_dir: str) -> None:
    trace_root = os.path.join(out_dir, "trace")
    os.makedirs(trace_root, exist_ok=True)
    for seed in matrix.seeds():
        for pen in matrix.penetrations:
            for loss in matrix.losses:
                for mode in matrix.modes:
                    cfg = matrix.scenario(loss, pen, mode, seed)
                    tag = f"{mode.name}_loss{loss}_pen{pen}_seed{seed}"
                    run_dir = os.path.join(trace_root, tag)
                    os.makedirs(run_dir, exist_ok=True)
                    with VerifiedStore(os.path.join(run_dir, "verified_store.csv")) as store, \
                         WindowLogger(os.path.join(run_dir, "window_log.csv")) as wlog, \
                         TrajectoryLogger(os.path.join(run_dir, "trajectory.csv")) as tlog, \
                         DeliveryLogger(os.path.join(run_dir, "deliveries.csv")) as dlog:
                        result = run_single(cfg, store=store, window_log=wlog,
                                            trace=tlog, delivery_log=dlog)
                    write_timeline(os.path.join(run_dir, "timeline.csv"),
                                   result.timeline)
                    print(f"trace: {tag} acc={result.accuracy:.4f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        matrix = configure(args)
    except (ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        report = run_matrix(matrix, out_dir=args.out, progress=True)
    except MatrixAborted as exc:
        print(str(exc), file=sys.stderr)
        if exc.partial_path:
            print(f"partial results: {exc.partial_path}", file=sys.stderr)
        return 2
    paths = emit_report(report, args.out)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    for test in report.overall:
        verdict = "significant" if test.significant_at_95 else "not significant"
        print(f"overall {test.pair}: t={test.t_stat:.3f} p={test.p_value:.4g} "
              f"({verdict} at 95%)")
    if args.trace:
        _dump_traces(matrix, args.out)
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
