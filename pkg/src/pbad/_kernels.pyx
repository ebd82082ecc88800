# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled adjoint kernels; see ``_kernels_py`` for the reference versions."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t idx_t


cdef inline void mm(const double* a, const double* b, double* out) noexcept nogil:
    # out = a @ b
    cdef int r, c
    for r in range(4):
        for c in range(4):
            out[4 * r + c] = (a[4 * r] * b[c] + a[4 * r + 1] * b[4 + c]
                              + a[4 * r + 2] * b[8 + c] + a[4 * r + 3] * b[12 + c])


cdef inline void mmt(const double* a, const double* b, double* out) noexcept nogil:
    # out = a @ b.T
    cdef int r, c
    for r in range(4):
        for c in range(4):
            out[4 * r + c] = (a[4 * r] * b[4 * c] + a[4 * r + 1] * b[4 * c + 1]
                              + a[4 * r + 2] * b[4 * c + 2] + a[4 * r + 3] * b[4 * c + 3])


cdef inline void mmt_add(const double* a, const double* b, double* out) noexcept nogil:
    # out += a @ b.T
    cdef int r, c
    for r in range(4):
        for c in range(4):
            out[4 * r + c] += (a[4 * r] * b[4 * c] + a[4 * r + 1] * b[4 * c + 1]
                               + a[4 * r + 2] * b[4 * c + 2] + a[4 * r + 3] * b[4 * c + 3])


cdef inline double dot16(const double* a, const double* b) noexcept nogil:
    cdef double s = 0.0
    cdef int r
    for r in range(16):
        s += a[r] * b[r]
    return s


cdef inline void copy16(const double* a, double* out) noexcept nogil:
    cdef int r
    for r in range(16):
        out[r] = a[r]


def forward(const idx_t[::1] parent, const double[:, :, ::1] J):
    cdef Py_ssize_t N = J.shape[0], i
    T_arr = np.empty((N, 4, 4))
    cdef double[:, :, ::1] T = T_arr
    with nogil:
        for i in range(N):
            if parent[i] < 0:
                copy16(&J[i, 0, 0], &T[i, 0, 0])
            else:
                mm(&T[parent[i], 0, 0], &J[i, 0, 0], &T[i, 0, 0])
    return T_arr


cdef void accumulate(const idx_t[::1] parent, const double[:, :, ::1] J, double[:, :, ::1] A) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(A.shape[0] - 1, -1, -1):
        if parent[i] >= 0:
            mmt_add(&A[i, 0, 0], &J[i, 0, 0], &A[parent[i], 0, 0])


def grad_linear(const idx_t[::1] parent, const idx_t[::1] dof_start, const idx_t[::1] ndof,
                const double[:, :, ::1] J, const double[:, :, ::1] W, G):
    A_arr = np.array(G, dtype=np.float64, order="C", copy=True)
    cdef double[:, :, ::1] A = A_arr
    grad_arr = np.zeros(W.shape[0])
    cdef double[::1] grad = grad_arr
    cdef Py_ssize_t i, g
    with nogil:
        accumulate(parent, J, A)
        for i in range(parent.shape[0]):
            for g in range(dof_start[i], dof_start[i] + ndof[i]):
                grad[g] = dot16(&W[g, 0, 0], &A[i, 0, 0])
    return grad_arr


def hess_linear(const idx_t[::1] parent, const idx_t[::1] dof_start, const idx_t[::1] ndof,
                const double[:, :, ::1] J, const double[:, :, ::1] dJ, const double[:, :, ::1] W,
                const double[:, :, :, ::1] W2, G):
    A_arr = np.array(G, dtype=np.float64, order="C", copy=True)
    cdef double[:, :, ::1] A = A_arr
    cdef Py_ssize_t n = W.shape[0]
    H_arr = np.zeros((n, n))
    cdef double[:, ::1] H = H_arr
    cdef double B[16]
    cdef double tmp[16]
    cdef Py_ssize_t m, k, j, l, s
    cdef double v
    with nogil:
        accumulate(parent, J, A)
        for m in range(parent.shape[0] - 1, -1, -1):
            s = dof_start[m]
            for k in range(s, s + ndof[m]):
                for j in range(s, k + 1):
                    v = dot16(&W2[j, k - s, 0, 0], &A[m, 0, 0])
                    H[j, k] = v
                    H[k, j] = v
                mmt(&A[m, 0, 0], &dJ[k, 0, 0], B)
                l = parent[m]
                while l >= 0:
                    for j in range(dof_start[l], dof_start[l] + ndof[l]):
                        v = dot16(&W[j, 0, 0], B)
                        H[j, k] = v
                        H[k, j] = v
                    mmt(B, &J[l, 0, 0], tmp)
                    copy16(tmp, B)
                    l = parent[l]
    return H_arr


def hess_mixed(const idx_t[::1] parent, const idx_t[::1] dof_start, const idx_t[::1] ndof,
               const double[:, :, ::1] Ja, const double[:, :, ::1] Jb,
               const double[:, :, ::1] Wa, const double[:, :, ::1] Wb, S):
    E_arr = np.array(S, dtype=np.float64, order="C", copy=True)
    cdef double[:, :, ::1] E = E_arr
    cdef Py_ssize_t N = parent.shape[0], n = Wa.shape[0]
    H_arr = np.zeros((n, n))
    cdef double[:, ::1] H = H_arr
    cdef double B[16]
    cdef double tmp[16]
    cdef Py_ssize_t i, m, k, j, l, s
    with nogil:
        for i in range(N - 1, -1, -1):
            if parent[i] >= 0:
                mm(&Jb[i, 0, 0], &E[i, 0, 0], tmp)
                mmt_add(tmp, &Ja[i, 0, 0], &E[parent[i], 0, 0])
        for m in range(N - 1, -1, -1):
            s = dof_start[m]
            for j in range(s, s + ndof[m]):
                for k in range(s, s + ndof[m]):
                    mm(&Wb[k, 0, 0], &E[m, 0, 0], tmp)
                    H[j, k] = dot16(&Wa[j, 0, 0], tmp)
            for k in range(s, s + ndof[m]):
                mm(&Wb[k, 0, 0], &E[m, 0, 0], tmp)
                mmt(tmp, &Ja[m, 0, 0], B)
                l = parent[m]
                while l >= 0:
                    for j in range(dof_start[l], dof_start[l] + ndof[l]):
                        H[j, k] = dot16(&Wa[j, 0, 0], B)
                    mmt(B, &Ja[l, 0, 0], tmp)
                    copy16(tmp, B)
                    l = parent[l]
            for j in range(s, s + ndof[m]):
                mmt(&Wa[j, 0, 0], &E[m, 0, 0], tmp)
                mmt(tmp, &Jb[m, 0, 0], B)
                l = parent[m]
                while l >= 0:
                    for k in range(dof_start[l], dof_start[l] + ndof[l]):
                        H[j, k] = dot16(&Wb[k, 0, 0], B)
                    mmt(B, &Jb[l, 0, 0], tmp)
                    copy16(tmp, B)
                    l = parent[l]
    return H_arr


def rates(const idx_t[::1] parent, const double[:, :, ::1] J,
          const double[:, :, ::1] Jd, const double[:, :, ::1] Jdd):
    cdef Py_ssize_t N = J.shape[0], i, r
    T_arr = np.empty((N, 4, 4))
    Td_arr = np.empty((N, 4, 4))
    Tdd_arr = np.empty((N, 4, 4))
    cdef double[:, :, ::1] T = T_arr
    cdef double[:, :, ::1] Td = Td_arr
    cdef double[:, :, ::1] Tdd = Tdd_arr
    cdef double t1[16]
    cdef double t2[16]
    cdef double t3[16]
    cdef idx_t p
    with nogil:
        for i in range(N):
            p = parent[i]
            if p < 0:
                copy16(&J[i, 0, 0], &T[i, 0, 0])
                copy16(&Jd[i, 0, 0], &Td[i, 0, 0])
                copy16(&Jdd[i, 0, 0], &Tdd[i, 0, 0])
            else:
                mm(&T[p, 0, 0], &J[i, 0, 0], &T[i, 0, 0])
                mm(&Td[p, 0, 0], &J[i, 0, 0], t1)
                mm(&T[p, 0, 0], &Jd[i, 0, 0], t2)
                for r in range(16):
                    Td[i, r // 4, r % 4] = t1[r] + t2[r]
                mm(&Tdd[p, 0, 0], &J[i, 0, 0], t1)
                mm(&Td[p, 0, 0], &Jd[i, 0, 0], t2)
                mm(&T[p, 0, 0], &Jdd[i, 0, 0], t3)
                for r in range(16):
                    Tdd[i, r // 4, r % 4] = t1[r] + 2.0 * t2[r] + t3[r]
    return T_arr, Td_arr, Tdd_arr
