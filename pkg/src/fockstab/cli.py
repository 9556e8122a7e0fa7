"""Command-line front door.

Subcommands map one-to-one onto the simulation modes:

  run          one feedback trajectory -> per-iteration CSV
  ensemble     many trajectories -> time-series CSV + terminal histogram
               (+ probe records when requested)
  baseline     trial-and-error preparation -> convergence time series
  recovery     reaction to a quantum jump -> time-series CSV
  reconstruct  maximum-likelihood photon distribution from probe records
  lambda-tune  grid search of the control-weight width

Every run writes ``<out>.manifest.json`` describing the resolved
configuration, seed, and produced files.  Same config + seed gives
byte-identical data files.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from .config import ConfigError, LoopConfig, PROBE_PHASES, parse_config
from .dataio import (
    new_manifest,
    read_histogram,
    read_probes,
    write_ensemble,
    write_histogram,
    write_manifest,
    write_matrix,
    write_probes,
    write_trajectory,
)
from .experiment import (
    convergence_time,
    run_ensemble,
    run_ensemble_with_probes,
    run_feedback_trajectory,
    run_jump_recovery,
    run_trial_and_error,
    tune_lambda,
)
from .reconstruction import ml_reconstruct


def _resolve(args: argparse.Namespace) -> tuple[LoopConfig, int]:
    config = parse_config(args.config) if args.config else LoopConfig()
    seed = args.seed if args.seed is not None else config.seed
    return config, seed


def _finish(manifest, out_stub: str) -> None:
    write_manifest(manifest, out_stub + ".manifest.json")


def cmd_run(args) -> int:
    config, seed = _resolve(args)
    manifest = new_manifest("run", config, seed)
    record = run_feedback_trajectory(config, seed)
    write_trajectory(record, args.out)
    manifest.outputs.append(args.out)
    for it, mat in sorted(record.snapshots.items()):
        path = f"{args.out}.rho_est_{it}.csv"
        write_matrix(mat, path)
        manifest.outputs.append(path)
    _finish(manifest, args.out)
    print(f"run: {record.iterations} iterations, stop={record.stop_reason}, "
          f"P_true({config.n_t})={record.p_true[-1, config.n_t]:.4f}")
    return 0


def cmd_ensemble(args) -> int:
    config, seed = _resolve(args)
    manifest = new_manifest("ensemble", config, seed)
    if args.probes:
        stats, records = run_ensemble_with_probes(config, args.trajectories, seed)
    else:
        stats = run_ensemble(config, args.trajectories, seed)
    write_ensemble(stats, args.out)
    manifest.outputs.append(args.out)
    hist_path = args.out + ".terminal_hist.csv"
    write_histogram(stats.terminal_truth_hist, hist_path, label="P_true")
    manifest.outputs.append(hist_path)
    if args.probes:
        probe_path = args.out + ".probes.csv"
        write_probes(records, probe_path)
        manifest.outputs.append(probe_path)
    _finish(manifest, args.out)
    t63 = convergence_time(stats)
    print(f"ensemble: {args.trajectories} trajectories, "
          f"P_true_mean({config.n_t}) at stop={stats.terminal_truth_hist[config.n_t]:.4f}, "
          f"t63={'%.4f s' % t63 if math.isfinite(t63) else 'not reached'}")
    return 0


def cmd_baseline(args) -> int:
    config, seed = _resolve(args)
    manifest = new_manifest("baseline", config, seed)
    stats = run_trial_and_error(config, args.tau, args.trajectories, seed)
    write_ensemble(stats, args.out)
    manifest.outputs.append(args.out)
    _finish(manifest, args.out)
    t63 = convergence_time(stats)
    print(f"baseline: {args.trajectories} trajectories, tau={args.tau} s, "
          f"mean attempts={stats.attempts.mean():.2f}, "
          f"t63={'%.4f s' % t63 if math.isfinite(t63) else 'not reached'}")
    return 0


def cmd_recovery(args) -> int:
    config, seed = _resolve(args)
    if not args.steady_hist:
        print("recovery: missing --steady-hist; run `fockstab ensemble` first and "
              "pass its .terminal_hist.csv", file=sys.stderr)
        return 2
    steady = read_histogram(args.steady_hist)
    manifest = new_manifest("recovery", config, seed)
    stats = run_jump_recovery(config, args.trajectories, seed,
                              estimator_populations=steady)
    write_ensemble(stats, args.out)
    manifest.outputs.append(args.out)
    _finish(manifest, args.out)
    print(f"recovery: {args.trajectories} trajectories over "
          f"{stats.times[-1] * 1e3:.1f} ms")
    return 0


def cmd_reconstruct(args) -> int:
    config, seed = _resolve(args)
    manifest = new_manifest("reconstruct", config, seed)
    records = read_probes(args.probes, config.phi_0)
    result = ml_reconstruct(records, PROBE_PHASES, config.phi_0,
                            config.imperfection_model(), args.levels)
    write_histogram(result.probabilities, args.out, label="P_qnd")
    manifest.outputs.append(args.out)
    _finish(manifest, args.out)
    flag = " (degenerate: no detections)" if result.degenerate else ""
    print(f"reconstruct: {len(records)} records, {result.iterations} EM iterations, "
          f"argmax n={int(np.argmax(result.probabilities))}{flag}")
    return 0


def cmd_lambda_tune(args) -> int:
    config, seed = _resolve(args)
    manifest = new_manifest("lambda-tune", config, seed)
    grid = [float(s) for s in args.grid.split(",") if s.strip()]
    best, table = tune_lambda(config, grid, args.trajectories, seed)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("shape_param,t63_s\n")
        for shape, t63 in table:
            fh.write(f"{shape!r},{t63!r}\n")
    manifest.outputs.append(args.out)
    _finish(manifest, args.out)
    print(f"lambda-tune: best shape_param={best}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fockstab",
        description="Photon-number state stabilization by measurement-based feedback",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file (defaults if omitted)")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (overrides config seed)")
        p.add_argument("--out", required=True, help="output data file")

    p = sub.add_parser("run", help="single feedback trajectory")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ensemble", help="feedback trajectory ensemble")
    common(p)
    p.add_argument("--trajectories", type=int, default=100)
    p.add_argument("--probes", action="store_true",
                   help="also record post-stop probe samples")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("baseline", help="trial-and-error preparation baseline")
    common(p)
    p.add_argument("--trajectories", type=int, default=100)
    p.add_argument("--tau", type=float, default=14e-3,
                   help="measurement window per attempt, seconds")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("recovery", help="quantum-jump recovery ensemble")
    common(p)
    p.add_argument("--trajectories", type=int, default=100)
    p.add_argument("--steady-hist",
                   help="terminal histogram CSV from a prior fixed-time ensemble")
    p.set_defaults(func=cmd_recovery)

    p = sub.add_parser("reconstruct", help="ML photon distribution from probes")
    common(p)
    p.add_argument("--probes", required=True, help="probe records CSV")
    p.add_argument("--levels", type=int, default=8,
                   help="reconstruction levels (identifiable window)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("lambda-tune", help="grid-search the control-weight width")
    common(p)
    p.add_argument("--trajectories", type=int, default=50,
                   help="trajectories per grid point")
    p.add_argument("--grid", default="1.0,1.5,2.0,3.0",
                   help="comma-separated shape parameters")
    p.set_defaults(func=cmd_lambda_tune)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
