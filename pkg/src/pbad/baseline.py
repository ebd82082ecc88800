"""Conventional forward dynamics ``M(q) qdd + c(q, qd) = Q`` and explicit integrators.

``M`` and ``c`` are evaluated in trace form from the same body integrals the
position-based objectives use:

    M_jl = sum_i tr(dT_i/dq_j S_i dT_i/dq_l^T)
    c_j  = sum_i tr(dT_i/dq_j S_i Tdd_i^T),  Tdd_i = sum_lm qd_l qd_m d2T_i/dq_l dq_m
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .adjoint import linear_grad, mixed_hess
from .kinematics import Frame
from .model import KinematicModel, validate_configuration
from .objective import ForceModel, _point_seed, _sample_arrays, contact_state, gravity_potential, gravity_seed, sample_positions
from .optim import IndefiniteMatrixError, spd_solve

SCHEMES = ("forward_euler", "semi_implicit", "rk2", "rk3", "rk4")


class SingularMassMatrixError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class DynamicsState:
    q: np.ndarray
    qdot: np.ndarray


def _check_state(model: KinematicModel, state: DynamicsState) -> tuple[np.ndarray, np.ndarray]:
    q = validate_configuration(model, state.q)
    qd = np.asarray(state.qdot, dtype=float)
    if qd.shape != q.shape:
        raise ValueError("qdot length does not match the model DOF count")
    return q, qd


def _rates(frame: Frame, qd: np.ndarray):
    """World transforms with first time derivative and the velocity-product second derivative."""
    m = frame.model
    frame.ensure_second()
    Jd = np.zeros_like(frame.J)
    np.add.at(Jd, m.link_of_dof, frame.dJ * qd[:, None, None])
    # d2J[g, l] pairs DOF g with local DOF l of the same joint
    local = np.zeros((m.total_dofs, frame.d2J.shape[1]))
    for i in range(m.n_links):
        s = m.dofs(i)
        local[s, : s.stop - s.start] = qd[s]
    Jdd = np.zeros_like(frame.J)
    np.add.at(Jdd, m.link_of_dof, np.einsum("gl,glab->gab", local, frame.d2J) * qd[:, None, None])
    return kernels.rates(m.parent, frame.J, Jd, Jdd)


def mass_and_coriolis(model: KinematicModel, state: DynamicsState, frame: Frame | None = None):
    q, qd = _check_state(model, state)
    frame = frame or Frame(model, q)
    M = mixed_hess(frame, frame)
    M = 0.5 * (M + M.T)
    _, _, Tdd = _rates(frame, qd)
    c = linear_grad(frame, Tdd @ model.S)
    return M, c


def generalized_forces(model: KinematicModel, forces: ForceModel, state: DynamicsState, t: float, dt: float,
                       frame: Frame | None = None) -> np.ndarray:
    """Gravity, actuation, and drag/contact evaluated explicitly at the current state."""
    q, qd = _check_state(model, state)
    frame = frame or Frame(model, q)
    seed = -gravity_seed(model, forces.g)
    need_rates = forces.drag_D > 0.0 or forces.contact is not None
    if need_rates:
        _, Td, _ = _rates(frame, qd)
    if forces.drag_D > 0.0:
        # drag force per unit mass is -(2 D / dt) Pdot, matching the incremental drag potential
        seed = seed - (2.0 * forces.drag_D / dt) * (Td @ model.S)
    if forces.contact is not None and len(_sample_arrays(model)[0]):
        P = sample_positions(model, frame.T)
        link, ph = _sample_arrays(model)
        V = np.einsum("mab,mb->ma", Td[link], ph)[:, :3]
        cs = contact_state(forces.contact, P, V, dt)
        if len(cs.active):
            seed = seed + _point_seed(model, cs.active, cs.force)
    return linear_grad(frame, seed) + forces.tau(model, t)


def acceleration(model: KinematicModel, forces: ForceModel, state: DynamicsState, t: float, dt: float) -> np.ndarray:
    q, _ = _check_state(model, state)
    frame = Frame(model, q, second=True)
    M, c = mass_and_coriolis(model, state, frame)
    Q = generalized_forces(model, forces, state, t, dt, frame)
    try:
        return spd_solve(M, Q - c)
    except IndefiniteMatrixError:
        raise SingularMassMatrixError("mass matrix is singular or not positive definite") from None


_TABLEAUS = {
    "rk2": ([[0.0], [0.5]], [0.0, 1.0], [0.0, 0.5]),
    "rk3": ([[0.0], [0.5], [-1.0, 2.0]], [1 / 6, 2 / 3, 1 / 6], [0.0, 0.5, 1.0]),
    "rk4": ([[0.0], [0.5], [0.0, 0.5], [0.0, 0.0, 1.0]], [1 / 6, 1 / 3, 1 / 3, 1 / 6], [0.0, 0.5, 0.5, 1.0]),
}


def step(model: KinematicModel, state: DynamicsState, forces: ForceModel, dt: float, scheme: str,
         t: float = 0.0) -> DynamicsState:
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    q, qd = _check_state(model, state)
    if scheme == "forward_euler":
        a = acceleration(model, forces, state, t, dt)
        return DynamicsState(q + dt * qd, qd + dt * a)
    if scheme == "semi_implicit":
        a = acceleration(model, forces, state, t, dt)
        qd_new = qd + dt * a
        return DynamicsState(q + dt * qd_new, qd_new)
    if scheme not in _TABLEAUS:
        raise ValueError(f"unknown integrator {scheme!r}")
    A, b, c = _TABLEAUS[scheme]
    kq, kv = [], []
    for s in range(len(b)):
        qs = q + dt * sum(A[s][j] * kq[j] for j in range(len(kq))) if kq else q
        vs = qd + dt * sum(A[s][j] * kv[j] for j in range(len(kv))) if kv else qd
        kq.append(vs)
        kv.append(acceleration(model, forces, DynamicsState(qs, vs), t + c[s] * dt, dt))
    return DynamicsState(q + dt * sum(bi * k for bi, k in zip(b, kq)), qd + dt * sum(bi * k for bi, k in zip(b, kv)))


def kinetic_energy(model: KinematicModel, Tdot: np.ndarray) -> float:
    return 0.5 * float(np.einsum("iab,iab->", Tdot @ model.S, Tdot))


def state_energy(model: KinematicModel, forces: ForceModel, state: DynamicsState) -> tuple[float, float]:
    """Kinetic and gravitational potential energy with analytic ``Tdot``."""
    q, qd = _check_state(model, state)
    frame = Frame(model, q, second=True)
    T, Td, _ = _rates(frame, qd)
    return kinetic_energy(model, Td), gravity_potential(model, T, forces.g)
