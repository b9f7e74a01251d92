"""Command-line harness.

Subcommands:
  train     run the alternating encoder/operator loop on a scene's synthetic
            observations; writes a checkpoint container and a loss CSV
  plan      one closed-loop planning episode; writes a trajectory CSV
  bench     run a benchmark suite; writes metrics.csv / summary.csv / summary.json
  simulate  ground-truth world rollout only; writes a state CSV

Exit codes: 0 success, 1 run failure, 2 configuration/usage error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import container
from .errors import SceneError, TrainingDivergedError
from .dynamics import fk_ee
from .observables import identity_dictionary, init_encoder
from .planner import run_episode
from .scenes import load_scene, generate_observation_dataset, simulate_coupled_episode
from .training import TrainingConfig, train, write_train_log


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kooplan", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="scene or suite JSON file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--fixed-clock", action="store_true",
                        help="zero wall-clock columns for byte-reproducible output")

    sp = sub.add_parser("train", help="alternating encoder/operator training")
    common(sp)
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--n-step", type=int, default=10)
    sp.add_argument("--refit-period", type=int, default=25)
    sp.add_argument("--learning-rate", type=float, default=0.1)
    sp.add_argument("--batch", type=int, default=16)
    sp.add_argument("--ridge", type=float, default=1e-3)
    sp.add_argument("--grad-clip", type=float, default=1.0)
    sp.add_argument("--trajectories", type=int, default=2)
    sp.add_argument("--samples", type=int, default=400)

    sp = sub.add_parser("plan", help="single closed-loop planning episode")
    common(sp)
    sp.add_argument("--method", default="dk_rrt",
                    choices=["dk_rrt", "frozen", "reactive"])

    sp = sub.add_parser("bench", help="run a benchmark suite")
    common(sp)

    sp = sub.add_parser("simulate", help="ground-truth rollout only")
    common(sp)
    sp.add_argument("--samples", type=int, default=0,
                    help="control-interval samples (default: fill the time limit)")
    return p


def _zero_clock() -> float:
    return 0.0


def cmd_train(args) -> int:
    scene = load_scene(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_observation_dataset(scene, args.trajectories, args.samples,
                                      seed=args.seed)
    dict_r = identity_dictionary(ds.robot_dim, constant=True)
    enc = init_encoder([ds.obs_dim, 48, ds.object_dim], seed=args.seed,
                       out_scale=0.05)
    cfg = TrainingConfig(
        n_epoch=args.epochs, n_step=args.n_step, refit_period=args.refit_period,
        learning_rate=args.learning_rate, batch=args.batch, seed=args.seed,
        ridge=args.ridge, grad_clip=args.grad_clip,
    )
    clock = _zero_clock if args.fixed_clock else time.perf_counter
    try:
        result = train(ds, cfg, dict_r, enc, clock=clock)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_train_log(out / "train_log.csv", result.history)
    container.save_checkpoint(out / "checkpoint.kpc", result.encoder,
                              result.operator, result.dictionary,
                              cfg.to_dict(), args.seed)
    final = result.history[-1].loss if result.history else float("nan")
    print(f"trained {cfg.n_epoch} epochs; final rollout loss {final:.6g}; "
          f"operator version {result.operator.version}")
    print(f"wrote {out / 'train_log.csv'} and {out / 'checkpoint.kpc'}")
    return 0


def _write_trajectory_csv(path, model, trace, n_obstacles):
    n = model.n_joints
    header = (["t"] + [f"q{i+1}" for i in range(n)] + [f"qd{i+1}" for i in range(n)]
              + ["ee_x", "ee_y", "ee_z"]
              + [f"clearance{i+1}" for i in range(n_obstacles)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in trace:
            w.writerow([f"{v:.9f}" for v in row])


def cmd_plan(args) -> int:
    scene = load_scene(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clock = _zero_clock if args.fixed_clock else time.perf_counter
    trace: list = []
    report = run_episode(scene, args.method, seed=args.seed, clock=clock,
                         trace=trace)
    _write_trajectory_csv(out / "trajectory.csv", scene.manipulator, trace,
                          len(scene.debris))
    print(f"success={report.success} collided={report.collided} "
          f"cycles={report.cycles} replans={report.replans} "
          f"exec_error={report.execution_error:.6f} rad "
          f"min_clearance={report.min_clearance:.4f} m")
    print(f"wrote {out / 'trajectory.csv'}")
    return 0 if report.success else 1


def cmd_bench(args) -> int:
    suite = bench_mod.load_suite(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clock = _zero_clock if args.fixed_clock else time.perf_counter
    rows = bench_mod.run_suite(suite, clock=clock, progress=print)
    bench_mod.write_metrics_csv(rows, out / "metrics.csv")
    summary = bench_mod.aggregate(rows)
    bench_mod.write_summary(summary, out / "summary.csv", out / "summary.json")
    for s in summary:
        print(f"{s['scene']:>16} {s['method']:>8}: "
              f"success {s['success_rate']:.2f}, "
              f"err {s['execution_error_mean_rad']:.4f} rad")
    print(f"wrote {out / 'metrics.csv'}, {out / 'summary.csv'}, {out / 'summary.json'}")
    return 0


def cmd_simulate(args) -> int:
    scene = load_scene(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ex = scene.execution
    n_samples = args.samples or max(2, int(ex.time_limit / ex.dt_cycle))
    times, robot, _ = simulate_coupled_episode(scene, n_samples)
    n = scene.manipulator.n_joints
    header = ["t"] + [f"q{i+1}" for i in range(n)] + [f"qd{i+1}" for i in range(n)]
    with open(out / "states.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, row in zip(times, robot):
            w.writerow([f"{t:.9f}"] + [f"{v:.9f}" for v in row])
    print(f"wrote {out / 'states.csv'} ({n_samples} samples)")
    return 0


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; normalize exit codes
        return 0 if exc.code == 0 else 2
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "plan":
            return cmd_plan(args)
        if args.command == "bench":
            return cmd_bench(args)
        if args.command == "simulate":
            return cmd_simulate(args)
    except SceneError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
