"""Levenberg-Marquardt and L-BFGS minimizers.

Both are written as generators that yield once per iteration, so a caller can
interleave many independent solves one iteration at a time (see
``stepper.batch_simulate``).  ``minimize`` simply drains the generator.

An evaluator is any callable ``evaluator(x, order)`` returning an object with
``value``, ``grad`` (order >= 1) and ``gn_matrix`` (order >= 2).  When the
value is a sum of squares ``|r|^2`` the evaluator may also expose ``residual``
and ``jacobian``; LM then solves its damped system as a stacked least-squares
problem, which keeps the conditioning of ``J`` instead of squaring it.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Generator

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lstsq

LM = "lm"
LBFGS = "lbfgs"


class IndefiniteMatrixError(LinAlgError):
    """Cholesky met a non-positive pivot."""


class OptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = LM
    max_iters: int = 512
    grad_tol: float = 1e-8
    # relative step below which an iterate is considered stationary (float noise floor)
    step_tol: float = 1e-12
    lbfgs_memory: int = 8
    lm_lambda0: float = 1e-3
    lm_lambda_factor: float = 10.0
    lm_lambda_max: float = 1e12
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40

    def __post_init__(self):
        if self.kind not in (LM, LBFGS):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        for name in ("max_iters", "grad_tol", "lbfgs_memory", "lm_lambda0", "max_backtracks"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.lm_lambda_factor > 1.0:
            raise ValueError("lm_lambda_factor must exceed 1")
        if not 0.0 < self.backtrack < 1.0 or not 0.0 < self.armijo_c1 < 1.0:
            raise ValueError("line search parameters must lie in (0, 1)")


@dataclass
class SolveReport:
    iterations: int = 0
    final_value: float = np.nan
    final_grad_norm: float = np.nan
    converged: bool = False
    per_iteration_values: list = field(default_factory=list)
    message: str = ""


def spd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A`` by Cholesky.

    Raises ``IndefiniteMatrixError`` when a pivot is not positive.
    """
    A = np.asarray(A, dtype=float)
    try:
        c = cho_factor(A, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise IndefiniteMatrixError(str(exc)) from None
    if np.any(np.diag(c[0]) <= 0.0):
        raise IndefiniteMatrixError("non-positive pivot")
    return cho_solve(c, np.asarray(b, dtype=float))


def _lm_step(ev, lam: float) -> np.ndarray:
    """Solve ``(G + lam I) dx = -grad`` with ``G`` the Gauss-Newton matrix."""
    J = getattr(ev, "jacobian", None)
    if J is None:
        return -spd_solve(ev.gn_matrix + lam * np.eye(ev.grad.size), ev.grad)
    # (2 J^T J + lam I) dx = -2 J^T r  <=>  min |sqrt2 J dx + sqrt2 r|^2 + lam |dx|^2
    n = J.shape[1]
    A = np.vstack([np.sqrt(2.0) * J, np.sqrt(lam) * np.eye(n)])
    b = np.concatenate([-np.sqrt(2.0) * ev.residual, np.zeros(n)])
    dx = lstsq(A, b, lapack_driver="gelsy", check_finite=False)[0]
    if not np.all(np.isfinite(dx)):
        raise IndefiniteMatrixError("non-finite least-squares step")
    return dx


def _gtol(cfg: OptimizerConfig, x: np.ndarray, scale: float) -> float:
    return cfg.grad_tol * scale * max(1.0, float(np.max(np.abs(x), initial=0.0)))


def _small_step(cfg: OptimizerConfig, step: np.ndarray, x: np.ndarray) -> bool:
    return float(np.max(np.abs(step), initial=0.0)) <= cfg.step_tol * max(1.0, float(np.max(np.abs(x), initial=0.0)))


def _start(evaluator, x0, order):
    x = np.array(x0, dtype=float).reshape(-1)
    ev = evaluator(x, order)
    if not np.isfinite(ev.value):
        raise OptimizerError("objective is not finite at the initial point")
    return x, ev


def lm_steps(evaluator: Callable, x0, cfg: OptimizerConfig, grad_scale: float = 1.0) -> Generator[None, None, tuple]:
    """LM with ``[J^T J + lambda I] dx = -grad``; one yield per trial step."""
    x, ev = _start(evaluator, x0, 2)
    rep = SolveReport()
    lam = cfg.lm_lambda0
    while True:
        gnorm = float(np.max(np.abs(ev.grad), initial=0.0))
        if gnorm <= _gtol(cfg, x, grad_scale):
            rep.converged, rep.message = True, "gradient tolerance"
            break
        if rep.iterations >= cfg.max_iters:
            rep.message = "iteration limit"
            break
        if lam > cfg.lm_lambda_max:
            rep.message = "damping limit"
            break
        rep.iterations += 1
        try:
            dx = _lm_step(ev, lam)
        except IndefiniteMatrixError:
            lam *= cfg.lm_lambda_factor
            rep.per_iteration_values.append(ev.value)
            yield
            continue
        if lam <= cfg.lm_lambda0 and _small_step(cfg, dx, x):
            rep.per_iteration_values.append(ev.value)
            rep.converged, rep.message = True, "stationary"
            yield
            break
        x_new = x + dx
        trial = evaluator(x_new, 0)
        if np.isfinite(trial.value) and trial.value < ev.value:
            x, ev = x_new, evaluator(x_new, 2)
            lam = max(lam / cfg.lm_lambda_factor, 1e-300)
        else:
            lam *= cfg.lm_lambda_factor
        rep.per_iteration_values.append(ev.value)
        yield
    rep.final_value = float(ev.value)
    rep.final_grad_norm = float(np.max(np.abs(ev.grad), initial=0.0))
    return x, rep


def lbfgs_steps(evaluator: Callable, x0, cfg: OptimizerConfig, grad_scale: float = 1.0) -> Generator[None, None, tuple]:
    """L-BFGS with Armijo backtracking; one yield per line search."""
    x, ev = _start(evaluator, x0, 1)
    rep = SolveReport()
    pairs: deque = deque(maxlen=cfg.lbfgs_memory)
    while True:
        g = ev.grad
        if float(np.max(np.abs(g), initial=0.0)) <= _gtol(cfg, x, grad_scale):
            rep.converged, rep.message = True, "gradient tolerance"
            break
        if rep.iterations >= cfg.max_iters:
            rep.message = "iteration limit"
            break
        rep.iterations += 1
        d = _two_loop(g, pairs)
        slope = float(g @ d)
        if not slope < 0.0:
            pairs.clear()
            d = _two_loop(g, pairs)
            slope = float(g @ d)
        t = 1.0
        accepted = None
        for _ in range(cfg.max_backtracks):
            x_new = x + t * d
            trial = evaluator(x_new, 0)
            if np.isfinite(trial.value) and trial.value <= ev.value + cfg.armijo_c1 * t * slope and trial.value < ev.value:
                accepted = x_new
                break
            t *= cfg.backtrack
        if accepted is None:
            rep.per_iteration_values.append(ev.value)
            if _small_step(cfg, t * d / cfg.backtrack, x):
                rep.converged, rep.message = True, "stationary"
            else:
                rep.message = "line search failed"
            yield
            break
        new = evaluator(accepted, 1)
        s, y = accepted - x, new.grad - g
        if float(s @ y) > 1e-12:
            pairs.append((s, y))
        else:
            # stale curvature keeps pointing the same way; restart the memory
            pairs.clear()
        stationary = _small_step(cfg, s, x)
        x, ev = accepted, new
        rep.per_iteration_values.append(ev.value)
        yield
        if stationary:
            rep.converged, rep.message = True, "stationary"
            break
    rep.final_value = float(ev.value)
    rep.final_grad_norm = float(np.max(np.abs(ev.grad), initial=0.0))
    return x, rep


def _two_loop(g: np.ndarray, pairs) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y in reversed(pairs):
        rho = 1.0 / float(s @ y)
        a = rho * float(s @ q)
        q -= a * y
        alphas.append((rho, a))
    if pairs:
        s, y = pairs[-1]
        q *= float(s @ y) / float(y @ y)
    else:
        # first step: unit infinity-norm move, the line search refines it
        q /= max(1.0, float(np.max(np.abs(q), initial=0.0)))
    for (s, y), (rho, a) in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def minimize_steps(evaluator: Callable, x0, config: OptimizerConfig | None = None, grad_scale: float = 1.0):
    """Generator form of ``minimize``; the result is the ``StopIteration`` value.

    ``grad_scale`` is the problem's characteristic gradient magnitude: the
    stopping test is ``|grad|_inf <= grad_tol * grad_scale * max(1, |x|_inf)``.
    """
    config = config or OptimizerConfig()
    if not grad_scale > 0.0:
        raise ValueError("grad_scale must be positive")
    if config.kind == LM:
        return lm_steps(evaluator, x0, config, grad_scale)
    return lbfgs_steps(evaluator, x0, config, grad_scale)


def drain(gen) -> tuple[np.ndarray, SolveReport]:
    while True:
        try:
            next(gen)
        except StopIteration as stop:
            return stop.value


def minimize(evaluator: Callable, x0, config: OptimizerConfig | None = None,
             grad_scale: float = 1.0) -> tuple[np.ndarray, SolveReport]:
    """Minimize ``evaluator`` from ``x0``; returns ``(x, report)``."""
    return drain(minimize_steps(evaluator, x0, config, grad_scale))
