"""Time stepping: the position-based loop, the baseline loop, and lockstep batches.

Each trajectory is a small state machine (``_Run``) whose ``advance`` performs
exactly one optimizer iteration (position-based) or one explicit step
(baselines).  ``simulate`` drains a single run; ``batch_simulate`` advances
many runs in lockstep rounds, one ``advance`` per unfinished run per round.
"""

from __future__ import annotations

import math
import multiprocessing as mp
from dataclasses import dataclass, field

import numpy as np

from .baseline import SCHEMES, DynamicsState, SingularMassMatrixError, kinetic_energy, state_energy
from .baseline import step as baseline_step
from .collocation import build_scheme
from .kinematics import forward_pass
from .model import KinematicModel, validate_configuration
from .objective import ENERGY, OBJECTIVE_KINDS, RESIDUAL, ForceModel, StepProblem, gravity_potential
from .optim import OptimizerConfig, minimize_steps

PBAD = "pbad"
INTEGRATORS = (PBAD,) + SCHEMES
BOOTSTRAPS = ("linear", "rk4")


class SimulationAborted(RuntimeError):
    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True, eq=False)
class SimConfig:
    dt: float
    duration: float
    q0: np.ndarray
    qdot0: np.ndarray
    integrator: str = PBAD
    order: int = 2
    objective: str = ENERGY
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    # history seeding for the first step: straight line through (q0, qdot0) or a short rk4 run backwards
    bootstrap: str = "linear"
    max_consecutive_failures: int = 20

    def __post_init__(self):
        if not self.dt > 0.0 or not self.duration > 0.0:
            raise ValueError("dt and duration must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.order < 2:
            raise ValueError("collocation order must be >= 2")
        if self.objective not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.integrator == PBAD and self.objective == ENERGY and self.order != 2:
            raise ValueError("the energy objective needs order 2; use the residual objective")
        if self.bootstrap not in BOOTSTRAPS:
            raise ValueError(f"unknown bootstrap {self.bootstrap!r}")
        object.__setattr__(self, "q0", np.asarray(self.q0, dtype=float).reshape(-1))
        object.__setattr__(self, "qdot0", np.asarray(self.qdot0, dtype=float).reshape(-1))

    @property
    def n_steps(self) -> int:
        # guard against 10/0.05 = 199.99999999999997
        return int(math.ceil(self.duration / self.dt - 1e-9))


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    qs: list = field(default_factory=list)
    energy_log: list = field(default_factory=list)
    solve_reports: list = field(default_factory=list)
    drag_work: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    @property
    def samples(self):
        return list(zip(self.times, self.qs))

    @property
    def q(self) -> np.ndarray:
        return np.array(self.qs)

    def energies(self) -> np.ndarray:
        """Rows ``(time, kinetic, potential, total)``."""
        e = np.array(self.energy_log, dtype=float).reshape(-1, 3)
        return np.column_stack([e, e[:, 1] + e[:, 2]])

    def iterations(self) -> list[int]:
        return [r.iterations for r in self.solve_reports]


def _finite_difference_kinetic(model: KinematicModel, T_new: np.ndarray, T_old: np.ndarray, dt: float) -> float:
    return kinetic_energy(model, (T_new - T_old) / dt)


def _drag_work(model: KinematicModel, D: float, T_new: np.ndarray, T_old: np.ndarray, dt: float) -> float:
    """Work done against the incremental drag force over one step (>= 0)."""
    if D <= 0.0:
        return 0.0
    dT = T_new - T_old
    return 2.0 * D / dt**2 * float(np.einsum("iab,iab->", dT @ model.S, dT))


class _Run:
    """One trajectory; ``advance`` does one unit of lockstep work."""

    def __init__(self, model: KinematicModel, forces: ForceModel, sim: SimConfig):
        self.model, self.forces, self.sim = model, forces, sim
        q0 = validate_configuration(model, sim.q0)
        if sim.qdot0.shape != q0.shape:
            raise ValueError("initial qdot length does not match the model DOF count")
        self.traj = Trajectory()
        self.k = 0
        self.done = False
        ke, pe = state_energy(model, forces, DynamicsState(q0, sim.qdot0))
        self._record(0.0, q0, ke, pe, 0.0)

    def _record(self, t, q, ke, pe, work):
        self.traj.times.append(float(t))
        self.traj.qs.append(np.array(q, dtype=float))
        self.traj.energy_log.append((float(t), float(ke), float(pe)))
        self.traj.drag_work.append(float(work))

    def _finish(self, status="ok", message=""):
        self.done = True
        self.traj.status, self.traj.message = status, message

    def advance(self) -> None:
        raise NotImplementedError


class _BaselineRun(_Run):
    def __init__(self, model, forces, sim):
        super().__init__(model, forces, sim)
        self.state = DynamicsState(self.traj.qs[0], sim.qdot0)

    def advance(self) -> None:
        sim = self.sim
        t = self.k * sim.dt
        try:
            # a diverging explicit run overflows on its way to non-finite; that is reported, not warned
            with np.errstate(over="ignore", invalid="ignore"):
                new = baseline_step(self.model, self.state, self.forces, sim.dt, sim.integrator, t)
            if not (np.all(np.isfinite(new.q)) and np.all(np.isfinite(new.qdot))):
                raise FloatingPointError
            with np.errstate(over="ignore", invalid="ignore"):
                ke, pe = state_energy(self.model, self.forces, new)
        except (SingularMassMatrixError, FloatingPointError, ValueError, np.linalg.LinAlgError):
            self._finish("diverged", f"non-finite or singular state at t={t + sim.dt:.17g}")
            return
        if not (math.isfinite(ke) and math.isfinite(pe)):
            self._finish("diverged", f"non-finite energy at t={t + sim.dt:.17g}")
            return
        self.state = new
        self.k += 1
        self._record(self.k * sim.dt, new.q, ke, pe, 0.0)
        if self.k >= sim.n_steps:
            self._finish()


def bootstrap_history(model: KinematicModel, forces: ForceModel, sim: SimConfig, tau_prev: float):
    """Configurations at ``tau_prev * dt`` and 0 seeding the first collocation window."""
    q0, qd0 = sim.q0, sim.qdot0
    if sim.bootstrap == "linear" or tau_prev == 0.0:
        return q0 + tau_prev * sim.dt * qd0, q0.copy()
    # integrate backwards in time: substitute t -> -t, which flips the velocity
    span = -tau_prev * sim.dt
    n_sub = max(1, int(math.ceil(span / 1e-4)))
    h = span / n_sub
    state = DynamicsState(q0, -qd0)
    flipped = ForceModel(forces.gravity, 0.0, None, None)
    for _ in range(n_sub):
        state = baseline_step(model, state, flipped, h, "rk4")
    return state.q, q0.copy()


class _PbadRun(_Run):
    def __init__(self, model, forces, sim):
        super().__init__(model, forces, sim)
        self.scheme = build_scheme(sim.order, sim.dt)
        self.history = bootstrap_history(model, forces, sim, float(self.scheme.times[0]))
        self.failures = 0
        self._gen = None
        self._problem = None

    def _start_step(self):
        sim, sch = self.sim, self.scheme
        self._problem = StepProblem(self.model, sch, self.history, self.forces, sim.objective, t0=self.k * sim.dt)
        h0, h1 = self.history
        vel = (h1 - h0) / (0.0 - sch.times[0])
        x0 = np.concatenate([h1 + a * vel for a in sch.alphas])
        self._gen = minimize_steps(self._problem.evaluate, x0, sim.optimizer, self._problem.grad_scale())

    def advance(self) -> None:
        if self._gen is None:
            self._start_step()
        try:
            next(self._gen)
            return
        except StopIteration as stop:
            x, report = stop.value
        self._gen = None
        self._complete_step(x, report)

    def _complete_step(self, x, report):
        sim, sch, model = self.sim, self.scheme, self.model
        unknowns = self._problem.split(x)
        self.traj.solve_reports.append(report)
        if not np.all(np.isfinite(unknowns)):
            self._finish("aborted", f"non-finite configuration at step {self.k + 1}")
            return
        self.failures = 0 if report.converged else self.failures + 1
        points = list(self.history) + list(unknowns)
        q_old, q_new = self.history[1], unknowns[-1]
        self.history = (points[sch.K - 1], points[sch.K])
        self.k += 1
        T_new, T_old = forward_pass(model, q_new), forward_pass(model, q_old)
        ke = _finite_difference_kinetic(model, T_new, T_old, sim.dt)
        pe = gravity_potential(model, T_new, self.forces.g)
        self._record(self.k * sim.dt, q_new, ke, pe, _drag_work(model, self.forces.drag_D, T_new, T_old, sim.dt))
        if self.failures > sim.max_consecutive_failures:
            self._finish("aborted", f"optimizer failed to converge on {self.failures} consecutive steps "
                                    f"(last: {report.message}, step {self.k})")
        elif self.k >= sim.n_steps:
            self._finish()


def _make_run(model, forces, sim) -> _Run:
    return _PbadRun(model, forces, sim) if sim.integrator == PBAD else _BaselineRun(model, forces, sim)


def simulate(model: KinematicModel, forces: ForceModel, sim: SimConfig, raise_on_abort: bool = False) -> Trajectory:
    """Run one trajectory.  Divergence and solver aborts are recorded in ``status``."""
    run = _make_run(model, forces, sim)
    while not run.done:
        run.advance()
    if raise_on_abort and run.traj.status == "aborted":
        raise SimulationAborted(run.traj.message, run.traj)
    return run.traj


# --- lockstep batches ---------------------------------------------------------


def _lockstep(runs: list[_Run]) -> int:
    rounds = 0
    while True:
        live = [r for r in runs if not r.done]
        if not live:
            return rounds
        for r in live:
            _safe_advance(r)
        rounds += 1


def _safe_advance(run: _Run) -> None:
    try:
        run.advance()
    except Exception as exc:  # one failing trajectory must not take down the batch
        run._finish("aborted", f"{type(exc).__name__}: {exc}")


class _FailedRun:
    """Stand-in for a trajectory whose setup raised; finished from the start."""

    def __init__(self, exc: Exception):
        self.done = True
        self.traj = Trajectory(status="aborted", message=f"invalid simulation config: {type(exc).__name__}: {exc}")


def _make_run_isolated(model, forces, sim):
    try:
        return _make_run(model, forces, sim)
    except Exception as exc:  # reported on that trajectory only
        return _FailedRun(exc)


def _worker(conn, model, forces, sims):
    runs = [_make_run_isolated(model, forces, s) for s in sims]
    while True:
        cmd = conn.recv()
        if cmd == "round":
            for r in runs:
                if not r.done:
                    _safe_advance(r)
            conn.send(all(r.done for r in runs))
        else:
            conn.send([r.traj for r in runs])
            conn.close()
            return


def batch_simulate(model: KinematicModel, forces: ForceModel, sims: list[SimConfig], workers: int = 1) -> list[Trajectory]:
    """Simulate many trajectories in lockstep rounds of one optimizer iteration each.

    With ``workers > 1`` the trajectories are dealt round-robin to worker
    processes; every round each worker advances its unfinished runs once and
    the parent waits for all of them (the barrier) before the next round.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    sims = list(sims)
    if workers == 1 or len(sims) <= 1:
        runs = [_make_run_isolated(model, forces, s) for s in sims]
        _lockstep(runs)
        return [r.traj for r in runs]
    workers = min(workers, len(sims))
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    parts = [list(range(w, len(sims), workers)) for w in range(workers)]
    procs, conns = [], []
    for idx in parts:
        parent, child = ctx.Pipe()
        p = ctx.Process(target=_worker, args=(child, model, forces, [sims[i] for i in idx]), daemon=True)
        p.start()
        child.close()
        procs.append(p)
        conns.append(parent)
    try:
        finished = [False] * workers
        while not all(finished):
            live = [w for w in range(workers) if not finished[w]]
            for w in live:
                conns[w].send("round")
            for w in live:
                finished[w] = conns[w].recv()
        out: list = [None] * len(sims)
        for w, idx in enumerate(parts):
            conns[w].send("collect")
            for i, traj in zip(idx, conns[w].recv()):
                out[i] = traj
    finally:
        for p in procs:
            p.join(timeout=5)
            if p.is_alive():
                p.terminate()
    return out
