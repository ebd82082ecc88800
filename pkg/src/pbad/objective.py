"""Per-step objectives and their derivatives.

Two objective kinds share one code path:

* ``energy``: for K = 2 and integrable forces, the step minimizes
  ``1/(2 dt^2) int rho |P+ - 2 P_k + P_{k-1}|^2 + Q(P+)``;
* ``residual``: for any K, the squared norm of the generalized force
  residual ``g_u = int dP/dq_u^T (rho P''(tau_u) - f)`` summed over unknowns.

Everything reduces to linear functionals ``sum_i G_i : T_i(q)`` whose
gradient and Hessian come from the adjoint kernels.  Gravity contributes the
seed ``-[g;0] s_i^T`` with ``s_i = S_i e4``, and a point force ``f`` at body
point ``p`` contributes ``-[f;0][p;1]^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import linear_grad, linear_hess, mixed_hess
from .collocation import CollocationScheme
from .kinematics import Frame, forward_pass
from .model import KinematicModel, validate_configuration

ENERGY = "energy"
RESIDUAL = "residual"
OBJECTIVE_KINDS = (ENERGY, RESIDUAL)


@dataclass(frozen=True)
class ContactModel:
    """Half-space ``n . x >= offset`` with penalty coefficients."""

    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    offset: float = 0.0
    D1: float = 1e4
    D2: float = 1e2

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("contact normal must be a unit 3-vector")
        if self.D1 < 0.0 or self.D2 < 0.0:
            raise ValueError("contact penalties must be non-negative")

    @property
    def n(self) -> np.ndarray:
        return np.asarray(self.normal, dtype=float)

    @property
    def tangent_projector(self) -> np.ndarray:
        n = self.n
        return np.eye(3) - np.outer(n, n)


@dataclass(frozen=True, eq=False)
class Actuation:
    """Open-loop generalized force ``tau(t) = amplitude * sin(2 pi f t + phase)``.

    ``constant`` ignores frequency and phase.
    """

    kind: str
    amplitude: np.ndarray
    frequency_hz: float = 0.0
    phase: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoidal"):
            raise ValueError(f"unknown actuation kind {self.kind!r}")
        amp = np.asarray(self.amplitude, dtype=float).reshape(-1)
        object.__setattr__(self, "amplitude", amp)
        ph = np.zeros_like(amp) if self.phase is None else np.asarray(self.phase, dtype=float).reshape(-1)
        if ph.shape != amp.shape:
            raise ValueError("actuation phase and amplitude lengths differ")
        object.__setattr__(self, "phase", ph)

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return self.amplitude
        return self.amplitude * np.sin(2.0 * np.pi * self.frequency_hz * t + self.phase)


@dataclass(frozen=True, eq=False)
class ForceModel:
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    drag_D: float = 0.0
    contact: ContactModel | None = None
    actuation: Actuation | None = None

    def __post_init__(self):
        if self.drag_D < 0.0:
            raise ValueError("drag coefficient must be non-negative")

    @property
    def g(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=float)

    def tau(self, model: KinematicModel, t: float) -> np.ndarray:
        if self.actuation is None:
            return np.zeros(model.total_dofs)
        tau = self.actuation(t)
        if tau.shape != (model.total_dofs,):
            raise ValueError("actuation length does not match the model DOF count")
        return tau


@dataclass(eq=False)
class ObjectiveEval:
    """Value, gradient and Gauss-Newton matrix.

    Least-squares objectives ``|r|^2`` also carry ``residual`` and its
    ``jacobian``; their ``gn_matrix = 2 J^T J`` is then formed on first access.
    """

    value: float
    grad: np.ndarray | None = None
    gn: np.ndarray | None = None
    residual: np.ndarray | None = None
    jacobian: np.ndarray | None = None

    @property
    def gn_matrix(self) -> np.ndarray | None:
        if self.gn is None and self.jacobian is not None:
            self.gn = 2.0 * self.jacobian.T @ self.jacobian
        return self.gn


# --- building blocks ---------------------------------------------------------


def gravity_seed(model: KinematicModel, g: np.ndarray) -> np.ndarray:
    """Seed of the gravity potential ``-g . sum_i T_i S_i e4``."""
    gh = np.append(g, 0.0)
    return -gh[None, :, None] * model.S[:, None, :, 3]


def gravity_potential(model: KinematicModel, T: np.ndarray, g: np.ndarray) -> float:
    com_moment = np.einsum("iab,ib->a", T, model.S[:, :, 3])[:3]
    return float(-g @ com_moment)


def _sample_arrays(model: KinematicModel):
    cached = model.__dict__.get("_sample_arrays")
    if cached is None:
        link = np.concatenate([np.full(len(s), i, dtype=np.int64) for i, s in enumerate(model.samples)])
        pts = np.concatenate([s for s in model.samples]) if len(link) else np.zeros((0, 3))
        ph = np.hstack([pts, np.ones((len(pts), 1))])
        cached = (link, ph)
        # derived data only; the model stays logically immutable
        object.__setattr__(model, "_sample_arrays", cached)
    return cached


def sample_positions(model: KinematicModel, T: np.ndarray) -> np.ndarray:
    link, ph = _sample_arrays(model)
    return np.einsum("mab,mb->ma", T[link], ph)[:, :3]


def sample_jacobians(frame: Frame, which: np.ndarray) -> np.ndarray:
    """``dP_s/dq`` (len(which), 3, n) for the selected contact samples."""
    model = frame.model
    link, ph = _sample_arrays(model)
    Xi = frame.twists()
    Pw = np.einsum("mab,mb->ma", frame.T[link[which]], ph[which])
    J = np.einsum("gab,mb->mag", Xi, Pw)[:, :3, :]
    return J * model.dof_mask[link[which]][:, None, :]


def _point_seed(model: KinematicModel, which: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Seed whose linear-functional gradient is ``sum_s J_s^T vec_s``."""
    link, ph = _sample_arrays(model)
    G = np.zeros((model.n_links, 4, 4))
    outer = np.zeros((len(which), 4, 4))
    outer[:, :3, :] = vec[:, :, None] * ph[which][:, None, :]
    np.add.at(G, link[which], outer)
    return G


@dataclass(frozen=True, eq=False)
class ContactState:
    """Penetrating samples with depth, tangential velocity, force and force Jacobians."""

    active: np.ndarray
    depth: np.ndarray
    vt: np.ndarray
    value: float
    force: np.ndarray
    dforce_dP: np.ndarray
    dforce_dV: np.ndarray


def contact_state(contact: ContactModel, P: np.ndarray, V: np.ndarray, dt: float) -> ContactState:
    """Penalty contact: ``D1 d^2 + D2 d^2 |Proj V|^2`` per sample with ``d = max(0, h - n.P)``."""
    n, Pi = contact.n, contact.tangent_projector
    D1, D2 = contact.D1, contact.D2
    d_all = contact.offset - P @ n
    active = np.nonzero(d_all > 0.0)[0]
    d = d_all[active]
    vt = V[active] @ Pi
    v2 = np.einsum("ma,ma->m", vt, vt)
    value = float(np.sum(D1 * d * d + D2 * d * d * v2))
    # f = -dQ/dP with V = (P - P_prev)/dt
    force = (2.0 * d * (D1 + D2 * v2))[:, None] * n - (2.0 * D2 * d * d / dt)[:, None] * vt
    nn = np.outer(n, n)
    dfdP = (
        -2.0 * (D1 + D2 * v2)[:, None, None] * nn
        + (4.0 * D2 * d / dt)[:, None, None] * vt[:, :, None] * n[None, None, :]
    )
    dfdV = (
        (4.0 * D2 * d)[:, None, None] * n[None, :, None] * vt[:, None, :]
        - (2.0 * D2 * d * d / dt)[:, None, None] * Pi
    )
    return ContactState(active, d, vt, value, force, dfdP, dfdV)


# --- potentials --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PotentialTerms:
    value: float
    seed: np.ndarray
    gn: np.ndarray | None


def _potentials(frame: Frame, T_prev: np.ndarray, forces: ForceModel, dt: float, want_gn: bool) -> PotentialTerms:
    model = frame.model
    T = frame.T
    seed = gravity_seed(model, forces.g)
    value = gravity_potential(model, T, forces.g)
    gn = np.zeros((model.total_dofs, model.total_dofs)) if want_gn else None
    D = forces.drag_D
    if D > 0.0:
        dT = T - T_prev
        dTS = dT @ model.S
        value += D / dt**2 * float(np.einsum("iab,iab->", dTS, dT))
        seed = seed + (2.0 * D / dt**2) * dTS
        if want_gn:
            gn += (2.0 * D / dt**2) * mixed_hess(frame, frame)
    if forces.contact is not None and len(_sample_arrays(model)[0]):
        c = forces.contact
        P = sample_positions(model, T)
        V = (P - sample_positions(model, T_prev)) / dt
        cs = contact_state(c, P, V, dt)
        if len(cs.active):
            value += cs.value
            seed = seed + _point_seed(model, cs.active, -cs.force)
            if want_gn:
                Js = sample_jacobians(frame, cs.active)
                n = c.n
                r1 = np.einsum("a,mag->mg", n, Js)
                gn += 2.0 * c.D1 * r1.T @ r1
                A = (-cs.vt[:, :, None] * n[None, None, :] + (cs.depth / dt)[:, None, None] * c.tangent_projector)
                r2 = np.einsum("mab,mbg->mag", A, Js).reshape(-1, model.total_dofs)
                gn += 2.0 * c.D2 * r2.T @ r2
    return PotentialTerms(value, seed, gn)


def eval_potentials(model: KinematicModel, forces: ForceModel, q_next, q_prev, dt: float, want_gn: bool = True):
    """Gravity, drag and contact potentials of the next configuration.

    Returns ``(value, grad, gn)``; ``gn`` is the Gauss-Newton block of the
    sum-of-squares terms (drag and contact), gravity being linear in ``P``.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    frame = Frame(model, q_next)
    T_prev = forward_pass(model, q_prev)
    terms = _potentials(frame, T_prev, forces, dt, want_gn)
    return terms.value, linear_grad(frame, terms.seed), terms.gn


# --- step problems -----------------------------------------------------------


@dataclass(eq=False)
class StepProblem:
    """One step: unknowns at ``tau = alpha_1..alpha_{K-1}`` given two history samples.

    ``history[0]`` sits at ``tau = scheme.times[0]`` and ``history[1]`` at
    ``tau = 0``; ``t0`` is the absolute time of ``tau = 0``.
    """

    model: KinematicModel
    scheme: CollocationScheme
    history: tuple[np.ndarray, np.ndarray]
    forces: ForceModel
    objective_kind: str = ENERGY
    t0: float = 0.0
    _hist_T: list = field(init=False, repr=False)

    def __post_init__(self):
        if self.objective_kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.objective_kind!r}")
        if self.objective_kind == ENERGY and self.scheme.K != 2:
            raise ValueError("the energy objective is only defined for order 2")
        if len(self.history) != 2:
            raise ValueError("a step needs exactly two history configurations")
        self.history = tuple(validate_configuration(self.model, h) for h in self.history)
        self._hist_T = [forward_pass(self.model, h) for h in self.history]

    @property
    def dt(self) -> float:
        return self.scheme.dt

    @property
    def n_unknowns(self) -> int:
        return self.scheme.n_unknown * self.model.total_dofs

    def unknown_times(self) -> np.ndarray:
        return self.t0 + self.scheme.alphas * self.dt

    def split(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.size != self.n_unknowns:
            raise ValueError(f"expected {self.n_unknowns} unknowns, got {x.size}")
        return x.reshape(self.scheme.n_unknown, self.model.total_dofs)

    def force_scale(self) -> float:
        """Characteristic generalized force: mass times max(|g|, 1 m/s^2) times body extent."""
        extent = max(1.0, float(np.max(np.linalg.norm(self._hist_T[1][:, :3, 3], axis=1))))
        return self.model.total_mass * max(1.0, float(np.linalg.norm(self.forces.g))) * extent

    def grad_scale(self) -> float:
        """Gradient magnitude the optimizer tolerance is relative to.

        Includes a factor of the unknown count: rounding noise in the summed
        per-body terms grows with problem size.
        """
        F = self.force_scale() * self.n_unknowns
        if self.objective_kind == ENERGY:
            return F
        # d|g|^2/dq ~ 2 |dg/dq| |g| with |dg/dq| ~ inertia / dt^2
        extent = self.force_scale() / (self.model.total_mass * max(1.0, float(np.linalg.norm(self.forces.g))))
        return 2.0 * F * self.model.total_mass * extent**2 / self.dt**2

    def evaluate(self, x, order: int = 1) -> ObjectiveEval:
        """``order`` 0: value; 1: value and gradient; 2: also the Gauss-Newton matrix."""
        if self.objective_kind == ENERGY:
            return eval_energy_form(self, x, order)
        return eval_residual_form(self, x, order)


def eval_energy_form(problem: StepProblem, q_next, order: int = 1) -> ObjectiveEval:
    if problem.objective_kind != ENERGY:
        raise ValueError("problem is not an energy-form problem")
    model, dt = problem.model, problem.dt
    q_next = validate_configuration(model, np.asarray(q_next, dtype=float).reshape(-1))
    frame = Frame(model, q_next)
    T_km1, T_k = problem._hist_T
    dT = frame.T - 2.0 * T_k + T_km1
    dTS = dT @ model.S
    value = 0.5 / dt**2 * float(np.einsum("iab,iab->", dTS, dT))
    pot = _potentials(frame, T_k, problem.forces, dt, order >= 2)
    tau = problem.forces.tau(model, problem.t0 + dt)
    value += pot.value - float(tau @ q_next)
    if order == 0:
        return ObjectiveEval(value)
    grad = linear_grad(frame, dTS / dt**2 + pot.seed) - tau
    gn = None
    if order >= 2:
        gn = mixed_hess(frame, frame) / dt**2 + pot.gn
    return ObjectiveEval(value, grad, gn)


def residual_blocks(problem: StepProblem, q_star, jacobian: bool = False):
    """Residual blocks ``g`` (K-1, n) and, if asked, ``dg/dq_star`` ((K-1) n)^2."""
    model, sch, dt = problem.model, problem.scheme, problem.dt
    qs = problem.split(q_star)
    U, n = qs.shape
    frames = [Frame(model, q, second=jacobian) for q in qs]
    Ts = problem._hist_T + [f.T for f in frames]
    TS = [T @ model.S for T in Ts]
    D = problem.forces.drag_D
    cw = (sch.w2 + 2.0 * D * sch.w1) / dt**2
    g_seed = gravity_seed(model, problem.forces.g)
    contact = problem.forces.contact
    has_samples = contact is not None and len(_sample_arrays(model)[0]) > 0
    if has_samples:
        Ps = [sample_positions(model, T) for T in Ts]
    taus = [problem.forces.tau(model, t) for t in problem.unknown_times()]
    g = np.empty((U, n))
    Jg = np.zeros((U * n, U * n)) if jacobian else None
    for u, fr in enumerate(frames):
        seed = g_seed + sum(cw[u, j] * TS[j] for j in range(len(Ts)))
        cs = None
        if has_samples:
            V = sum(sch.w1[u, j] * Ps[j] for j in range(len(Ps))) / dt
            cs = contact_state(contact, Ps[2 + u], V, dt)
            if len(cs.active):
                seed = seed + _point_seed(model, cs.active, -cs.force)
        g[u] = linear_grad(fr, seed) - taus[u]
        if not jacobian:
            continue
        rows = slice(u * n, (u + 1) * n)
        Jg[rows, rows] += linear_hess(fr, seed)
        for v, fv in enumerate(frames):
            cols = slice(v * n, (v + 1) * n)
            Jg[rows, cols] += cw[u, 2 + v] * mixed_hess(fv, fr).T
        if cs is not None and len(cs.active):
            Ju = sample_jacobians(fr, cs.active)
            for v, fv in enumerate(frames):
                cols = slice(v * n, (v + 1) * n)
                K = cs.dforce_dV * (sch.w1[u, 2 + v] / dt)
                if v == u:
                    K = K + cs.dforce_dP
                    Jv = Ju
                else:
                    Jv = sample_jacobians(fv, cs.active)
                Jg[rows, cols] -= np.einsum("mag,mab,mbh->gh", Ju, K, Jv)
    return g, Jg


def eval_residual_form(problem: StepProblem, q_star, order: int = 1) -> ObjectiveEval:
    if problem.objective_kind != RESIDUAL:
        raise ValueError("problem is not a residual-form problem")
    g, Jg = residual_blocks(problem, q_star, jacobian=order >= 1)
    r = g.reshape(-1)
    value = float(r @ r)
    if order == 0:
        return ObjectiveEval(value)
    grad = 2.0 * Jg.T @ r
    if order < 2:
        return ObjectiveEval(value, grad)
    return ObjectiveEval(value, grad, residual=r, jacobian=Jg)
