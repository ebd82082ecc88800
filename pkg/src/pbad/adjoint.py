"""Correlation functional ``I(qa, qb) = integral of rho P(qa)^T P(qb) dp`` and its derivatives.

With the body integrals ``S_i`` this is ``sum_i (Ta_i S_i) : Tb_i - mass``.
Derivatives come from reverse (adjoint) accumulation over the tree:

* ``correlation_and_grad``: value and ``dI/dqb`` in O(N);
* ``hessian_bb``: ``d2I/dqb2`` in O(N * depth);
* ``hessian_ab``: ``d2I/dqa dqb`` in O(N * depth), ``H[j, k] = d/dqa_j d/dqb_k``.

The generic building blocks ``linear_grad``/``linear_hess`` differentiate any
functional ``sum_i G_i : T_i(q)`` with fixed seeds ``G_i``; the objective
module uses them for stencil-weighted inertia, gravity and contact terms.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kinematics import Frame, forward_pass
from .model import KinematicModel, validate_configuration


@dataclass(frozen=True, eq=False)
class CorrelationRequest:
    model: KinematicModel
    qa: np.ndarray
    qb: np.ndarray
    weight_per_body: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "qa", validate_configuration(self.model, self.qa))
        object.__setattr__(self, "qb", validate_configuration(self.model, self.qb))
        if self.weight_per_body is not None:
            w = np.asarray(self.weight_per_body, dtype=float).reshape(-1)
            if w.shape[0] != self.model.n_links:
                raise ValueError("weight_per_body needs one weight per link")
            object.__setattr__(self, "weight_per_body", w)

    def weighted_S(self) -> np.ndarray:
        if self.weight_per_body is None:
            return self.model.S
        return self.model.S * self.weight_per_body[:, None, None]

    def weighted_mass(self) -> np.ndarray:
        if self.weight_per_body is None:
            return self.model.mass
        return self.model.mass * self.weight_per_body


@dataclass(frozen=True, eq=False)
class CorrelationDerivatives:
    value: float
    grad_b: np.ndarray
    hess_bb: np.ndarray
    hess_ab: np.ndarray


def linear_grad(frame: Frame, G: np.ndarray) -> np.ndarray:
    """Gradient of ``sum_i G[i] : T_i(q)`` at ``frame`` with ``G`` fixed."""
    m = frame.model
    return kernels.grad_linear(m.parent, m.dof_offsets, m.ndof, frame.J, frame.W, G)


def linear_hess(frame: Frame, G: np.ndarray) -> np.ndarray:
    """Hessian of ``sum_i G[i] : T_i(q)`` at ``frame`` with ``G`` fixed."""
    m = frame.model
    frame.ensure_second()
    return kernels.hess_linear(m.parent, m.dof_offsets, m.ndof, frame.J, frame.dJ, frame.W, frame.W2, G)


def mixed_hess(fa: Frame, fb: Frame, S: np.ndarray | None = None) -> np.ndarray:
    """``d2/dqa dqb`` of ``sum_i (Ta_i S_i) : Tb_i``; rows index ``qa``."""
    m = fa.model
    S = m.S if S is None else S
    return kernels.hess_mixed(m.parent, m.dof_offsets, m.ndof, fa.J, fb.J, fa.W, fb.W, S)


def seeds(Ta: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Adjoint seeds ``dI_i/dTb_i = Ta_i S_i`` (S symmetric)."""
    return Ta @ S


def correlation_value(Ta: np.ndarray, Tb: np.ndarray, S: np.ndarray, mass: np.ndarray) -> float:
    return float(np.einsum("iab,iab->", Ta @ S, Tb) - mass.sum())


def correlation_and_grad(req: CorrelationRequest) -> tuple[float, np.ndarray]:
    """Value of ``I(qa, qb)`` and its gradient with respect to ``qb`` in O(N)."""
    Ta = forward_pass(req.model, req.qa)
    fb = Frame(req.model, req.qb)
    S = req.weighted_S()
    G = seeds(Ta, S)
    value = correlation_value(Ta, fb.T, S, req.weighted_mass())
    return value, linear_grad(fb, G)


def hessian_bb(req: CorrelationRequest) -> np.ndarray:
    """Exact ``d2I/dqb2``; entry (j, l) is zero unless the two DOFs lie on one root path."""
    fb = Frame(req.model, req.qb, second=True)
    return linear_hess(fb, seeds(forward_pass(req.model, req.qa), req.weighted_S()))


def hessian_ab(req: CorrelationRequest) -> np.ndarray:
    """Exact mixed ``d2I/dqa dqb`` with rows indexing ``qa``."""
    fa = Frame(req.model, req.qa)
    fb = Frame(req.model, req.qb)
    return mixed_hess(fa, fb, req.weighted_S())


def correlation_suite(req: CorrelationRequest) -> CorrelationDerivatives:
    """All serial quantities in one call, sharing the forward passes."""
    fa = Frame(req.model, req.qa)
    fb = Frame(req.model, req.qb, second=True)
    S = req.weighted_S()
    G = seeds(fa.T, S)
    return CorrelationDerivatives(
        value=correlation_value(fa.T, fb.T, S, req.weighted_mass()),
        grad_b=linear_grad(fb, G),
        hess_bb=linear_hess(fb, G),
        hess_ab=mixed_hess(fa, fb, S),
    )


# --- per-link parallel variant -------------------------------------------------


class _SharedSum:
    """Scalar accumulator with an atomic add."""

    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0.0

    def add(self, x: float) -> None:
        with self._lock:
            self.value += x


def _path(model: KinematicModel, i: int) -> list[int]:
    return list(reversed(model.ancestors(i))) + [i]


def _subtree_reversed(model: KinematicModel, i: int) -> list[int]:
    out = [i]
    k = 0
    while k < len(out):
        out.extend(model.children[out[k]])
        k += 1
    return sorted(out, reverse=True)


class _ParallelPass:
    """Work items for one link each; writes go to disjoint output entries."""

    def __init__(self, req: CorrelationRequest):
        m = req.model
        self.m = m
        self.S = req.weighted_S()
        self.mass = req.weighted_mass()
        self.fa = Frame(m, req.qa, second=False)
        self.fb = Frame(m, req.qb, second=True)
        N, n = m.n_links, m.total_dofs
        self.Ta = np.empty((N, 4, 4))
        self.Tb = np.empty((N, 4, 4))
        self.total = _SharedSum()
        self.grad = np.zeros(n)
        self.hbb = np.zeros((n, n))
        self.hab = np.zeros((n, n))

    def forward_item(self, i: int) -> None:
        # Each item recomputes its own root-to-link chain.
        Ta = np.eye(4)
        Tb = np.eye(4)
        for j in _path(self.m, i):
            Ta = Ta @ self.fa.J[j]
            Tb = Tb @ self.fb.J[j]
        self.Ta[i] = Ta
        self.Tb[i] = Tb
        self.total.add(float(np.sum((Ta @ self.S[i]) * Tb)) - float(self.mass[i]))

    def _subtree_sum(self, i: int, seed) -> np.ndarray:
        """``sum over d in subtree(i) of seed(d) C_{i,d}^T`` (chain from i to d)."""
        m = self.m
        acc = {}
        for d in _subtree_reversed(m, i):
            A = seed(d) + acc.pop(d, 0.0)
            if d == i:
                return A
            p = int(m.parent[d])
            acc[p] = acc.get(p, 0.0) + A @ self.fb.J[d].T
        raise AssertionError("unreachable")

    def _mixed_subtree(self, i: int) -> np.ndarray:
        m = self.m
        acc = {}
        for d in _subtree_reversed(m, i):
            E = self.S[d] + acc.pop(d, 0.0)
            if d == i:
                return E
            p = int(m.parent[d])
            acc[p] = acc.get(p, 0.0) + self.fb.J[d] @ E @ self.fa.J[d].T
        raise AssertionError("unreachable")

    def backward_item(self, i: int) -> None:
        m, fa, fb = self.m, self.fa, self.fb
        s = m.dofs(i)
        # gradient entries of link i
        A = self._subtree_sum(i, lambda d: self.Ta[d] @ self.S[d])
        for k in range(s.start, s.stop):
            self.grad[k] = np.sum(fb.W[k] * A)
        # d2I/dqb2: own block, then pairs (ancestor DOF, own DOF)
        for k in range(s.start, s.stop):
            for j in range(s.start, s.stop):
                self.hbb[j, k] = np.sum(fb.W2[j, k - s.start] * A)
            B = A @ fb.dJ[k].T
            for l in m.ancestors(i):
                sl = m.dofs(l)
                for j in range(sl.start, sl.stop):
                    self.hbb[j, k] = self.hbb[k, j] = np.sum(fb.W[j] * B)
                B = B @ fb.J[l].T
        # d2I/dqa dqb: own block once, then both off-diagonal orientations
        E = self._mixed_subtree(i)
        for j in range(s.start, s.stop):
            for k in range(s.start, s.stop):
                self.hab[j, k] = np.sum(fa.W[j] * (fb.W[k] @ E))
        for k in range(s.start, s.stop):
            F = fb.W[k] @ E @ fa.J[i].T
            for l in m.ancestors(i):
                sl = m.dofs(l)
                for j in range(sl.start, sl.stop):
                    self.hab[j, k] = np.sum(fa.W[j] * F)
                F = F @ fa.J[l].T
        for j in range(s.start, s.stop):
            Gm = fa.W[j] @ E.T @ fb.J[i].T
            for l in m.ancestors(i):
                sl = m.dofs(l)
                for k in range(sl.start, sl.stop):
                    self.hab[j, k] = np.sum(fb.W[k] * Gm)
                Gm = Gm @ fb.J[l].T


def parallel_correlation_suite(req: CorrelationRequest, workers: int = 1) -> CorrelationDerivatives:
    """Per-link work items on a thread pool, one barrier between the passes.

    Every item owns the gradient entries and Hessian rows/columns of its own
    DOFs paired with ancestor DOFs, so no two items write the same entry; the
    scalar value is accumulated with an atomic add.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    job = _ParallelPass(req)
    links = range(req.model.n_links)
    if workers == 1:
        for i in links:
            job.forward_item(i)
        for i in links:
            job.backward_item(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(job.forward_item, links))
            list(pool.map(job.backward_item, links))
    return CorrelationDerivatives(job.total.value, job.grad, job.hbb, job.hab)
