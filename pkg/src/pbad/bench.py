"""Benchmark suites: chain swing, derivative scaling, timestep sweep, optimizer iterations, lockstep batch.

Each suite returns a list of row dicts; ``write_rows`` turns them into CSV.
"""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from .adjoint import CorrelationRequest, correlation_and_grad, hessian_ab, hessian_bb
from .optim import LBFGS, LM, OptimizerConfig
from .scene import Scene, chain_scene, scene_from_dict
from .stepper import PBAD, Trajectory, batch_simulate, simulate

SUITES = ("swing", "scaling", "timestep", "iterations", "batch")
SWEEP_TIMESTEPS = (0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.064, 0.128)
SCALING_SIZES = (10, 20, 40, 80)


def energy_drift(traj: Trajectory) -> tuple[float, float]:
    """Final and largest-magnitude total-energy change relative to the initial total."""
    E = traj.energies()[:, 3]
    E0 = E[0]
    if not np.all(np.isfinite(E)):
        return float("inf"), float("inf")
    rel = (E - E0) / abs(E0)
    return float(rel[-1]), float(rel[np.argmax(np.abs(rel))])


def timed_simulate(scene: Scene, **overrides) -> tuple[Trajectory, float]:
    cfg = scene.sim_config(**overrides)
    t = time.perf_counter()
    traj = simulate(scene.model, scene.forces, cfg)
    return traj, time.perf_counter() - t


def _run_row(label: str, traj: Trajectory, wall: float, **extra) -> dict:
    steps = max(1, len(traj.times) - 1)
    final, peak = energy_drift(traj)
    its = traj.iterations()
    return dict(label=label, **extra, steps=steps, wall_time=wall, time_per_step=wall / steps,
                mean_iterations=float(np.mean(its)) if its else 0.0, energy_drift=final, peak_energy_drift=peak,
                status=traj.status)


SWING_RUNS = (
    ("pbad_k2_dt0.0025", dict(integrator=PBAD, order=2, dt=0.0025)),
    ("pbad_k3_dt0.0025", dict(integrator=PBAD, order=3, dt=0.0025, objective="residual")),
    ("pbad_k2_dt0.05", dict(integrator=PBAD, order=2, dt=0.05)),
    ("semi_implicit_dt0.0025", dict(integrator="semi_implicit", dt=0.0025)),
    ("semi_implicit_dt0.05", dict(integrator="semi_implicit", dt=0.05)),
)


def swing_suite(scene: Scene | None = None, duration: float | None = None, traces: dict | None = None) -> list[dict]:
    """Energy behaviour of the released chain for the runs in ``SWING_RUNS``.

    When ``traces`` is a dict it receives each run's energy table.
    """
    scene = scene or scene_from_dict(chain_scene(10))
    rows = []
    for label, kw in SWING_RUNS:
        traj, wall = timed_simulate(scene, duration=duration, **kw)
        rows.append(_run_row(label, traj, wall, integrator=kw["integrator"], order=kw.get("order", ""), dt=kw["dt"]))
        if traces is not None:
            traces[label] = traj
    return rows


def _best_time(fn, min_total: float = 0.2, max_repeats: int = 200) -> float:
    """Smallest wall time of repeated calls; repeats until ``min_total`` seconds have been spent."""
    best, spent, n = float("inf"), 0.0, 0
    while (spent < min_total or n < 3) and n < max_repeats:
        t = time.perf_counter()
        fn()
        dt = time.perf_counter() - t
        best, spent, n = min(best, dt), spent + dt, n + 1
    return best


def fit_exponent(sizes, times) -> float:
    """Least-squares slope of log(time) against log(size)."""
    return float(np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(times, float)), 1)[0])


def scaling_suite(sizes=SCALING_SIZES, seed: int = 0, min_total: float = 0.2) -> tuple[list[dict], list[dict]]:
    """Derivative-pass wall time against chain length, plus fitted exponents."""
    rng = np.random.default_rng(seed)
    rows = []
    for N in sizes:
        model = scene_from_dict(chain_scene(N)).model
        qa = rng.uniform(-0.5, 0.5, model.total_dofs)
        qb = qa + rng.uniform(-0.1, 0.1, model.total_dofs)
        req = CorrelationRequest(model, qa, qb)
        rows.append(dict(
            n_links=N,
            n_dofs=model.total_dofs,
            grad_time=_best_time(lambda: correlation_and_grad(req), min_total),
            hess_bb_time=_best_time(lambda: hessian_bb(req), min_total),
            hess_ab_time=_best_time(lambda: hessian_ab(req), min_total),
        ))
    fits = [dict(quantity=q, exponent=fit_exponent([r["n_links"] for r in rows], [r[q] for r in rows]))
            for q in ("grad_time", "hess_bb_time", "hess_ab_time")]
    return rows, fits


def timestep_suite(scene: Scene | None = None, timesteps=SWEEP_TIMESTEPS, duration: float = 1.024,
                   objective: str | None = None, optimizer: str = LM) -> list[dict]:
    """Per-step wall time over the standard timestep sweep (0.001 s doubling to 0.128 s) for a fixed simulated duration."""
    scene = scene or scene_from_dict(chain_scene(10))
    rows = []
    for dt in timesteps:
        traj, wall = timed_simulate(scene, dt=dt, duration=duration, objective=objective,
                                    optimizer=OptimizerConfig(kind=optimizer))
        rows.append(_run_row(f"dt{dt:g}", traj, wall, dt=dt))
    return rows


def iterations_suite(sizes=(10, 40), dt: float = 0.05, duration: float = 1.0, objective: str | None = None) -> list[dict]:
    """Mean optimizer iterations per step for LM and L-BFGS on chains of several lengths."""
    rows = []
    for N in sizes:
        scene = scene_from_dict(chain_scene(N, dt=dt, duration=duration))
        for kind in (LM, LBFGS):
            traj, wall = timed_simulate(scene, objective=objective, optimizer=OptimizerConfig(kind=kind))
            rows.append(_run_row(f"chain{N}_{kind}", traj, wall, n_links=N, optimizer=kind,
                                 converged_fraction=float(np.mean([r.converged for r in traj.solve_reports]))))
    return rows


def batch_configs(scene: Scene, count: int, steps: int, seed: int = 0, spread: float = 0.3):
    rng = np.random.default_rng(seed)
    base = scene.sim_config()
    cfgs = []
    for _ in range(count):
        q0 = base.q0 + rng.uniform(-spread, spread, base.q0.size)
        cfgs.append(scene.sim_config(q0=q0, duration=steps * base.dt))
    return cfgs


def batch_suite(scene: Scene | None = None, count: int = 100, steps: int = 10, workers: int = 4,
                seed: int = 0) -> list[dict]:
    """Lockstep batch wall time for one worker and for ``workers``, with the deviation between them."""
    scene = scene or scene_from_dict(chain_scene(10, dt=0.01))
    cfgs = batch_configs(scene, count, steps, seed)
    rows, results = [], {}
    for w in sorted({1, int(workers)}):
        t = time.perf_counter()
        results[w] = batch_simulate(scene.model, scene.forces, cfgs, workers=w)
        wall = time.perf_counter() - t
        rows.append(dict(trajectories=count, steps=steps, workers=w, wall_time=wall))
    ref = results[1]
    for row in rows:
        out = results[row["workers"]]
        row["speedup"] = rows[0]["wall_time"] / row["wall_time"]
        row["max_deviation"] = max(float(np.max(np.abs(a.q - b.q))) for a, b in zip(out, ref))
    return rows


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_rows(path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys: list = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([format_value(r.get(k, "")) for k in keys])
    return path
