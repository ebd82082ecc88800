"""Finite-difference verification of the analytic derivatives.

Every category compares an analytic quantity against central differences
with step ``h`` and reports the worst relative error
``max|analytic - fd| / max|fd|`` over the trials.  ``parallel_vs_serial``
is an absolute difference instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import CorrelationRequest, correlation_and_grad, correlation_suite, parallel_correlation_suite
from .collocation import build_scheme
from .kinematics import joint_jet
from .model import KinematicModel
from .objective import ENERGY, RESIDUAL, ForceModel, StepProblem, residual_blocks

FD_STEP = 1e-5
FAIL_THRESHOLD = 1e-4

CATEGORIES = (
    "joint_jet_d1",
    "joint_jet_d2",
    "correlation_grad",
    "correlation_hess_bb",
    "correlation_hess_ab",
    "parallel_vs_serial",
    "objective_grad_energy",
    "objective_grad_residual",
    "objective_jacobian_residual",
)


def central_gradient(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = None
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        col = (np.asarray(f(x + e), dtype=float) - np.asarray(f(x - e), dtype=float)) / (2.0 * h)
        if out is None:
            out = np.empty(col.shape + (x.size,))
        out[..., k] = col
    return out


def rel_err(analytic, reference) -> float:
    a, b = np.asarray(analytic, dtype=float), np.asarray(reference, dtype=float)
    scale = float(np.max(np.abs(b), initial=0.0))
    diff = float(np.max(np.abs(a - b), initial=0.0))
    if scale == 0.0:
        return diff
    return diff / scale


@dataclass
class CheckReport:
    errors: dict = field(default_factory=dict)
    trials: int = 0

    def add(self, category: str, err: float) -> None:
        self.errors[category] = max(self.errors.get(category, 0.0), float(err))

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, threshold: float = FAIL_THRESHOLD) -> bool:
        return all(e <= threshold for e in self.errors.values())

    def lines(self) -> list[str]:
        return [f"{c:30s} {self.errors[c]:.3e}" for c in CATEGORIES if c in self.errors]


def _random_q(rng, model: KinematicModel, center: np.ndarray, spread: float) -> np.ndarray:
    return center + rng.uniform(-spread, spread, model.total_dofs)


def check_joint_jets(report: CheckReport, model: KinematicModel, rng) -> None:
    for link in model.links:
        joint = link.joint
        q = rng.uniform(-1.0, 1.0, joint.dof_count)
        jet = joint_jet(joint, q)
        d1 = np.moveaxis(central_gradient(lambda x: joint_jet(joint, x).value, q), -1, 0)
        d2 = np.moveaxis(central_gradient(lambda x: joint_jet(joint, x).d1, q), -1, 1)
        report.add("joint_jet_d1", rel_err(jet.d1, d1))
        report.add("joint_jet_d2", rel_err(jet.d2, d2))


def check_correlation(report: CheckReport, model: KinematicModel, qa, qb, workers: int = 2) -> None:
    req = CorrelationRequest(model, qa, qb)
    suite = correlation_suite(req)

    def value(x):
        return correlation_and_grad(CorrelationRequest(model, qa, x))[0]

    def grad_b(x):
        return correlation_and_grad(CorrelationRequest(model, qa, x))[1]

    def grad_b_of_a(x):
        return correlation_and_grad(CorrelationRequest(model, x, qb))[1]

    report.add("correlation_grad", rel_err(suite.grad_b, central_gradient(value, qb)))
    report.add("correlation_hess_bb", rel_err(suite.hess_bb, central_gradient(grad_b, qb)))
    # column l of d(grad_b)/d(qa) is row l of hess_ab
    report.add("correlation_hess_ab", rel_err(suite.hess_ab, central_gradient(grad_b_of_a, qa).T))
    par = parallel_correlation_suite(req, workers)
    diff = max(abs(par.value - suite.value),
               *(float(np.max(np.abs(a - b))) for a, b in
                 ((par.grad_b, suite.grad_b), (par.hess_bb, suite.hess_bb), (par.hess_ab, suite.hess_ab))))
    report.add("parallel_vs_serial", diff)


def check_objectives(report: CheckReport, model: KinematicModel, forces: ForceModel, history, x_next, rng,
                     dt: float, order: int = 3) -> None:
    prob = StepProblem(model, build_scheme(2, dt), history, forces, ENERGY, t0=0.3)
    ev = prob.evaluate(x_next, 1)
    fd = central_gradient(lambda x: prob.evaluate(x, 0).value, x_next)
    report.add("objective_grad_energy", rel_err(ev.grad, fd))
    prob = StepProblem(model, build_scheme(order, dt), history, forces, RESIDUAL, t0=0.3)
    x = np.concatenate([x_next + 0.05 * rng.uniform(-1.0, 1.0, x_next.size) for _ in range(order - 1)])
    ev = prob.evaluate(x, 1)
    fd = central_gradient(lambda y: prob.evaluate(y, 0).value, x)
    report.add("objective_grad_residual", rel_err(ev.grad, fd))
    _, Jg = residual_blocks(prob, x, jacobian=True)
    Jfd = central_gradient(lambda y: residual_blocks(prob, y)[0].reshape(-1), x)
    report.add("objective_jacobian_residual", rel_err(Jg, Jfd))


def check_derivatives(model: KinematicModel, forces: ForceModel, trials: int, seed: int = 0,
                      q_center=None, dt: float = 0.01, order: int = 3, spread: float = 0.5) -> CheckReport:
    """Run ``trials`` randomized instances of every category."""
    rng = np.random.default_rng(seed)
    center = np.zeros(model.total_dofs) if q_center is None else np.asarray(q_center, dtype=float)
    report = CheckReport(trials=int(trials))
    for _ in range(int(trials)):
        check_joint_jets(report, model, rng)
        qa, qb = _random_q(rng, model, center, spread), _random_q(rng, model, center, spread)
        check_correlation(report, model, qa, qb)
        q_prev = _random_q(rng, model, center, spread)
        q_k = q_prev + 0.1 * rng.uniform(-1.0, 1.0, model.total_dofs)
        q_next = q_k + 0.1 * rng.uniform(-1.0, 1.0, model.total_dofs)
        check_objectives(report, model, forces, (q_prev, q_k), q_next, rng, dt, order)
    return report
