"""Pure-Python/NumPy versions of the adjoint kernels.

Same signatures and arithmetic order as the compiled ``_kernels`` module;
used when the extension is not built or ``PBAD_PURE_PYTHON=1`` is set.

Notation: ``A : B = sum(A * B)``.  All passes visit links in reverse
topological order, so a link's subtree is complete before it is used.
"""

import numpy as np


def forward(parent, J):
    N = J.shape[0]
    T = np.empty_like(J)
    for i in range(N):
        p = parent[i]
        T[i] = J[i] if p < 0 else T[p] @ J[i]
    return T


def _accumulate(parent, J, G):
    """``A[i] = G[i] + sum over children c of A[c] @ J[c]^T``."""
    A = np.array(G, dtype=float, copy=True)
    for i in range(len(parent) - 1, -1, -1):
        p = parent[i]
        if p >= 0:
            A[p] += A[i] @ J[i].T
    return A


def grad_linear(parent, dof_start, ndof, J, W, G):
    """Gradient of ``sum_i G[i] : T_i(q)`` with ``G`` held fixed."""
    A = _accumulate(parent, J, G)
    grad = np.zeros(W.shape[0])
    for i in range(len(parent)):
        s = dof_start[i]
        for g in range(s, s + ndof[i]):
            grad[g] = np.sum(W[g] * A[i])
    return grad


def hess_linear(parent, dof_start, ndof, J, dJ, W, W2, G):
    """Hessian of ``sum_i G[i] : T_i(q)`` with ``G`` held fixed."""
    A = _accumulate(parent, J, G)
    n = W.shape[0]
    H = np.zeros((n, n))
    for m in range(len(parent) - 1, -1, -1):
        s = dof_start[m]
        for k in range(s, s + ndof[m]):
            for j in range(s, k + 1):
                H[j, k] = H[k, j] = np.sum(W2[j, k - s] * A[m])
            B = A[m] @ dJ[k].T
            l = parent[m]
            while l >= 0:
                sl = dof_start[l]
                for j in range(sl, sl + ndof[l]):
                    H[j, k] = H[k, j] = np.sum(W[j] * B)
                B = B @ J[l].T
                l = parent[l]
    return H


def hess_mixed(parent, dof_start, ndof, Ja, Jb, Wa, Wb, S):
    """``H[j, k] = d^2/dqa_j dqb_k of sum_i (Ta_i S_i) : Tb_i``."""
    N = len(parent)
    E = np.array(S, dtype=float, copy=True)
    for i in range(N - 1, -1, -1):
        p = parent[i]
        if p >= 0:
            E[p] += Jb[i] @ E[i] @ Ja[i].T
    n = Wa.shape[0]
    H = np.zeros((n, n))
    for m in range(N - 1, -1, -1):
        s = dof_start[m]
        for j in range(s, s + ndof[m]):
            for k in range(s, s + ndof[m]):
                H[j, k] = np.sum(Wa[j] * (Wb[k] @ E[m]))
        # a-side DOF above m, b-side DOF on m
        for k in range(s, s + ndof[m]):
            F = Wb[k] @ E[m] @ Ja[m].T
            l = parent[m]
            while l >= 0:
                sl = dof_start[l]
                for j in range(sl, sl + ndof[l]):
                    H[j, k] = np.sum(Wa[j] * F)
                F = F @ Ja[l].T
                l = parent[l]
        # b-side DOF above m, a-side DOF on m
        for j in range(s, s + ndof[m]):
            Gm = Wa[j] @ E[m].T @ Jb[m].T
            l = parent[m]
            while l >= 0:
                sl = dof_start[l]
                for k in range(sl, sl + ndof[l]):
                    H[j, k] = np.sum(Wb[k] * Gm)
                Gm = Gm @ Jb[l].T
                l = parent[l]
    return H


def rates(parent, J, Jd, Jdd):
    """World transforms with their first time derivative and the velocity-product
    part of the second time derivative (the acceleration-free ``T''``)."""
    N = J.shape[0]
    T = np.empty_like(J)
    Td = np.empty_like(J)
    Tdd = np.empty_like(J)
    for i in range(N):
        p = parent[i]
        if p < 0:
            T[i], Td[i], Tdd[i] = J[i], Jd[i], Jdd[i]
        else:
            T[i] = T[p] @ J[i]
            Td[i] = Td[p] @ J[i] + T[p] @ Jd[i]
            Tdd[i] = Tdd[p] @ J[i] + 2.0 * (Td[p] @ Jd[i]) + T[p] @ Jdd[i]
    return T, Td, Tdd
