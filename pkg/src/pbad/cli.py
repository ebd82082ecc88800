"""Command line: ``pbad simulate | check-derivatives | benchmark``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import bench, kernels
from .checks import FAIL_THRESHOLD, check_derivatives
from .optim import LBFGS, LM, OptimizerConfig
from .objective import OBJECTIVE_KINDS
from .scene import SceneError, load_scene
from .stepper import INTEGRATORS, Trajectory, simulate

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_ABORTED = 2
EXIT_DIVERGED = 3
EXIT_CHECK_FAILED = 4


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_trajectory_csv(path, traj: Trajectory, n_dofs: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + [f"q_{j}" for j in range(n_dofs)])
        for t, q in zip(traj.times, traj.qs):
            w.writerow([_fmt(t)] + [_fmt(v) for v in q])


def write_energy_csv(path, traj: Trajectory) -> None:
    its = [0] + traj.iterations()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "kinetic", "potential", "total", "iterations"])
        for k, (t, ke, pe, tot) in enumerate(traj.energies()):
            w.writerow([_fmt(t), _fmt(ke), _fmt(pe), _fmt(tot), its[k] if k < len(its) else 0])


def _optimizer(args, scene) -> OptimizerConfig:
    kind = args.optimizer or scene.integrator.get("optimizer", LM)
    kw = {"kind": kind}
    if args.max_iters is not None:
        kw["max_iters"] = args.max_iters
    if args.grad_tol is not None:
        kw["grad_tol"] = args.grad_tol
    return OptimizerConfig(**kw)


def cmd_simulate(args) -> int:
    scene = load_scene(args.scene)
    scene = scene.with_overrides(dt=args.dt, duration=args.duration, integrator=args.integrator,
                                 order=args.order, objective=args.objective)
    cfg = scene.sim_config(optimizer=_optimizer(args, scene))
    traj = simulate(scene.model, scene.forces, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out / "trajectory.csv", traj, scene.model.total_dofs)
    write_energy_csv(out / "energy.csv", traj)
    E = traj.energies()[:, 3]
    print(f"{len(traj.times) - 1} steps, status {traj.status}, "
          f"energy {_fmt(E[0])} -> {_fmt(E[-1])}, wrote {out / 'trajectory.csv'} and {out / 'energy.csv'}")
    if traj.status == "aborted":
        print(f"error: simulation aborted: {traj.message}", file=sys.stderr)
        return EXIT_ABORTED
    if traj.status == "diverged":
        print(f"error: simulation diverged: {traj.message}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_check_derivatives(args) -> int:
    scene = load_scene(args.scene)
    report = check_derivatives(scene.model, scene.forces, args.trials, seed=args.seed,
                               q_center=scene.doc["initial"]["q"], dt=scene.dt, order=args.order or 3)
    print(f"derivative check: {report.trials} trials, backend {kernels.BACKEND}")
    for line in report.lines():
        print(line)
    if not report.passed(FAIL_THRESHOLD):
        print(f"error: worst error {report.worst:.3e} exceeds {FAIL_THRESHOLD:g}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_benchmark(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suite = args.suite
    scene = load_scene(args.scene) if args.scene else None
    if scene is not None:
        scene = scene.with_overrides(dt=args.dt, order=args.order, objective=args.objective)
    if suite == "swing":
        traces: dict = {}
        rows = bench.swing_suite(scene, duration=args.duration, traces=traces)
        for label, traj in traces.items():
            write_energy_csv(out / f"swing_{label}_energy.csv", traj)
    elif suite == "scaling":
        sizes = tuple(args.sizes) if args.sizes else bench.SCALING_SIZES
        rows, fits = bench.scaling_suite(sizes, seed=args.seed)
        bench.write_rows(out / "scaling_fit.csv", fits)
        for f in fits:
            print(f"fitted exponent {f['quantity']}: {f['exponent']:.3f}")
    elif suite == "timestep":
        rows = bench.timestep_suite(scene, duration=args.duration or 1.024, objective=args.objective,
                                    optimizer=args.optimizer or LM)
        t = [r["time_per_step"] for r in rows]
        print(f"per-step time max/min: {max(t) / min(t):.3f}")
    elif suite == "iterations":
        rows = bench.iterations_suite(duration=args.duration or 1.0, objective=args.objective)
    else:
        rows = bench.batch_suite(scene, count=args.trajectories, steps=args.steps, workers=args.workers, seed=args.seed)
    path = bench.write_rows(out / f"{suite}.csv", rows)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pbad", description="Position-based articulated dynamics")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scene_required=True):
        sp.add_argument("--scene", required=scene_required, help="scene JSON path or bundled scene name")
        sp.add_argument("--dt", type=float)
        sp.add_argument("--order", type=int)
        sp.add_argument("--objective", choices=OBJECTIVE_KINDS)
        sp.add_argument("--optimizer", choices=(LM, LBFGS))
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=4)

    s = sub.add_parser("simulate", help="run a scene and write trajectory.csv and energy.csv")
    common(s)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--duration", type=float)
    s.add_argument("--integrator", choices=INTEGRATORS)
    s.add_argument("--max-iters", type=int)
    s.add_argument("--grad-tol", type=float)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check-derivatives", help="finite-difference check of all analytic derivatives")
    common(c)
    c.add_argument("--trials", type=int, default=10)
    c.set_defaults(func=cmd_check_derivatives)

    b = sub.add_parser("benchmark", help="run a benchmark suite and write its CSV")
    b.add_argument("suite", choices=bench.SUITES)
    common(b, scene_required=False)
    b.add_argument("--out", default=".", help="output directory")
    b.add_argument("--duration", type=float)
    b.add_argument("--sizes", type=int, nargs="+")
    b.add_argument("--trajectories", type=int, default=100)
    b.add_argument("--steps", type=int, default=10)
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except SceneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
