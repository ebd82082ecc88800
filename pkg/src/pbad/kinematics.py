"""Joint transforms, their first/second derivatives, and forward composition.

Every joint map is ``T_joint(q) = offset @ motion(q)``.  Derivatives are
returned densely per joint; the chain-rule sparsity is exploited by the
adjoint kernels, not here.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from . import kernels
from .model import JOINT_DOFS, MAX_JOINT_DOFS, JointSpec, KinematicModel, validate_configuration

# Below this rotation angle the rotation-vector coefficients are evaluated
# from their Taylor series; the closed forms of the higher coefficients lose
# about eps/theta**6 to cancellation.
SERIES_THRESHOLD = 0.5
_SERIES_TERMS = 12

_GEN = np.zeros((3, 3, 3))
_GEN[0, 2, 1], _GEN[0, 1, 2] = 1.0, -1.0
_GEN[1, 0, 2], _GEN[1, 2, 0] = 1.0, -1.0
_GEN[2, 1, 0], _GEN[2, 0, 1] = 1.0, -1.0


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix, batched over leading axes."""
    v = np.asarray(v, dtype=float)
    return np.einsum("...j,jab->...ab", v, _GEN)


def _series(theta2, start, coef):
    out = np.zeros_like(theta2)
    for k in reversed(range(start, start + _SERIES_TERMS)):
        out = out * theta2 + coef(k)
    return out


def rotvec_coefficients(theta: np.ndarray):
    """Coefficients ``a..f`` of the rotation-vector map and its derivatives.

    ``R = I + a K + b K^2``; ``c, d`` are ``a'/theta, b'/theta`` and
    ``e, f`` are ``c'/theta, d'/theta``.
    """
    theta = np.asarray(theta, dtype=float)
    small = theta < SERIES_THRESHOLD
    t = np.where(small, 1.0, theta)
    s, co = np.sin(t), np.cos(t)
    closed = (
        s / t,
        (1.0 - co) / t**2,
        (t * co - s) / t**3,
        (t * s - 2.0 * (1.0 - co)) / t**4,
        (3.0 * s - 3.0 * t * co - t * t * s) / t**5,
        (t * t * co - 5.0 * t * s + 8.0 - 8.0 * co) / t**6,
    )
    th2 = theta * theta
    series = (
        _series(th2, 0, lambda k: (-1) ** k / factorial(2 * k + 1)),
        _series(th2, 0, lambda k: (-1) ** k / factorial(2 * k + 2)),
        _series(th2, 0, lambda k: (-1) ** (k + 1) * 2 * (k + 1) / factorial(2 * k + 3)),
        _series(th2, 0, lambda k: (-1) ** (k + 1) * 2 * (k + 1) / factorial(2 * k + 4)),
        _series(th2, 0, lambda k: (-1) ** k * 2 * (k + 2) * 2 * (k + 1) / factorial(2 * k + 5)),
        _series(th2, 0, lambda k: (-1) ** k * 2 * (k + 2) * 2 * (k + 1) / factorial(2 * k + 6)),
    )
    return tuple(np.where(small, sr, cl) for sr, cl in zip(series, closed))


def rotation_from_vector(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    a, b, *_ = rotvec_coefficients(np.linalg.norm(w, axis=-1))
    K = skew(w)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def rotvec_jet(w: np.ndarray, second: bool = True):
    """Rotation matrix of rotation vectors ``w`` (B,3) with first/second derivatives.

    Returns ``R`` (B,3,3), ``dR`` (B,3,3,3) indexed ``[b, j]`` and, if asked,
    ``d2R`` (B,3,3,3,3) indexed ``[b, j, l]``.
    """
    w = np.asarray(w, dtype=float).reshape(-1, 3)
    a, b, c, d, e, f = rotvec_coefficients(np.linalg.norm(w, axis=1))
    K = skew(w)
    K2 = K @ K
    E = _GEN
    EK = np.einsum("jab,zbc->zjac", E, K) + np.einsum("zab,jbc->zjac", K, E)
    x = lambda s: s[:, None, None, None]  # noqa: E731
    R = np.eye(3) + a[:, None, None] * K + b[:, None, None] * K2
    dR = (
        x(c) * w[:, :, None, None] * K[:, None]
        + a[:, None, None, None] * E[None]
        + x(d) * w[:, :, None, None] * K2[:, None]
        + b[:, None, None, None] * EK
    )
    if not second:
        return R, dR, None
    eye = np.eye(3)
    ww = w[:, :, None] * w[:, None, :]
    y = lambda s: s[:, None, None, None, None]  # noqa: E731
    cK = (c[:, None, None] * eye + e[:, None, None] * ww)
    dK2 = (d[:, None, None] * eye + f[:, None, None] * ww)
    wE = w[:, :, None, None, None] * E[None, None, :] + w[:, None, :, None, None] * E[None, :, None]
    wEK = w[:, :, None, None, None] * EK[:, None, :] + w[:, None, :, None, None] * EK[:, :, None]
    EE = np.einsum("jab,lbc->jlac", E, E)
    EE = EE + EE.transpose(1, 0, 2, 3)
    d2R = (
        cK[:, :, :, None, None] * K[:, None, None]
        + y(c) * wE
        + dK2[:, :, :, None, None] * K2[:, None, None]
        + y(d) * wEK
        + y(b) * EE[None]
    )
    return R, dR, d2R


def axis_rotation_jet(axis: np.ndarray, theta: np.ndarray):
    """Rotation about unit ``axis`` (B,3) by ``theta`` (B,) and its derivatives."""
    K = skew(axis)
    K2 = K @ K
    s, c = np.sin(theta)[:, None, None], np.cos(theta)[:, None, None]
    R = np.eye(3) + s * K + (1.0 - c) * K2
    return R, K @ R, K2 @ R


@dataclass(frozen=True)
class JointGroup:
    kind: str
    links: np.ndarray
    dof_start: np.ndarray
    offsets: np.ndarray
    axis: np.ndarray | None
    axis2: np.ndarray | None


def joint_groups(model: KinematicModel) -> tuple[JointGroup, ...]:
    cached = model.__dict__.get("_joint_groups")
    if cached is not None:
        return cached
    groups = []
    for kind in JOINT_DOFS:
        idx = np.array([i for i, l in enumerate(model.links) if l.joint.kind == kind], dtype=np.int64)
        if len(idx) == 0:
            continue
        joints = [model.links[i].joint for i in idx]
        groups.append(JointGroup(
            kind=kind,
            links=idx,
            dof_start=model.dof_offsets[idx],
            offsets=np.array([j.offset for j in joints]),
            axis=np.array([j.axis for j in joints]) if kind in ("hinge", "universal") else None,
            axis2=np.array([j.axis2 for j in joints]) if kind == "universal" else None,
        ))
    groups = tuple(groups)
    # KinematicModel is frozen; the cache is derived data only.
    object.__setattr__(model, "_joint_groups", groups)
    return groups


def _motion_jets(kind: str, axis, axis2, qg: np.ndarray, second: bool):
    """Local motion transforms (B,4,4), d1 (B,k,4,4), d2 (B,k,k,4,4)."""
    B, k = qg.shape
    M = np.zeros((B, 4, 4))
    M[:, 3, 3] = 1.0
    d1 = np.zeros((B, k, 4, 4))
    d2 = np.zeros((B, k, k, 4, 4)) if second else None
    if kind == "hinge":
        R, dR, d2R = axis_rotation_jet(axis, qg[:, 0])
        M[:, :3, :3] = R
        d1[:, 0, :3, :3] = dR
        if second:
            d2[:, 0, 0, :3, :3] = d2R
    elif kind == "universal":
        R1, dR1, d2R1 = axis_rotation_jet(axis, qg[:, 0])
        R2, dR2, d2R2 = axis_rotation_jet(axis2, qg[:, 1])
        M[:, :3, :3] = R1 @ R2
        d1[:, 0, :3, :3] = dR1 @ R2
        d1[:, 1, :3, :3] = R1 @ dR2
        if second:
            d2[:, 0, 0, :3, :3] = d2R1 @ R2
            d2[:, 0, 1, :3, :3] = d2[:, 1, 0, :3, :3] = dR1 @ dR2
            d2[:, 1, 1, :3, :3] = R1 @ d2R2
    elif kind == "ball":
        R, dR, d2R = rotvec_jet(qg, second)
        M[:, :3, :3] = R
        d1[:, :, :3, :3] = dR
        if second:
            d2[:, :, :, :3, :3] = d2R
    elif kind == "free":
        R, dR, d2R = rotvec_jet(qg[:, 3:], second)
        M[:, :3, :3] = R
        M[:, :3, 3] = qg[:, :3]
        for j in range(3):
            d1[:, j, j, 3] = 1.0
        d1[:, 3:, :3, :3] = dR
        if second:
            d2[:, 3:, 3:, :3, :3] = d2R
    else:  # pragma: no cover - guarded by JointSpec
        raise ValueError(kind)
    return M, d1, d2


@dataclass(frozen=True, eq=False)
class JointJet:
    value: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


def joint_jet(joint: JointSpec, q_local) -> JointJet:
    """Joint transform ``offset @ motion(q)`` with analytic first and second derivatives."""
    q_local = np.asarray(q_local, dtype=float).reshape(-1)
    if q_local.shape[0] != joint.dof_count:
        raise ValueError(f"{joint.kind} joint expects {joint.dof_count} coordinates, got {q_local.shape[0]}")
    axis = None if joint.axis is None else joint.axis[None]
    axis2 = None if joint.axis2 is None else joint.axis2[None]
    M, d1, d2 = _motion_jets(joint.kind, axis, axis2, q_local[None], True)
    off = joint.offset
    return JointJet(off @ M[0], off @ d1[0], off @ d2[0])


def model_jets(model: KinematicModel, q: np.ndarray, second: bool = False):
    """Local joint transforms for every link.

    Returns ``J`` (N,4,4), ``dJ`` (n,4,4) and, when ``second`` is set,
    ``d2J`` (n,MAX_JOINT_DOFS,4,4) where ``d2J[g, l]`` differentiates by DOF
    ``g`` and by local DOF ``l`` of the same joint.
    """
    N, n = model.n_links, model.total_dofs
    J = np.empty((N, 4, 4))
    dJ = np.empty((n, 4, 4))
    d2J = np.zeros((n, MAX_JOINT_DOFS, 4, 4)) if second else None
    for g in joint_groups(model):
        k = JOINT_DOFS[g.kind]
        cols = g.dof_start[:, None] + np.arange(k)
        M, d1, d2 = _motion_jets(g.kind, g.axis, g.axis2, q[cols], second)
        off = g.offsets
        J[g.links] = off @ M
        dJ[cols.reshape(-1)] = (off[:, None] @ d1).reshape(-1, 4, 4)
        if second:
            d2J[cols.reshape(-1), :k] = (off[:, None, None] @ d2).reshape(-1, k, 4, 4)
    return J, dJ, d2J


class Frame:
    """Kinematic quantities of one configuration.

    ``T`` are world transforms, ``W[g]`` the world-frame derivative of the
    transform of the link owning DOF ``g`` with respect to ``q[g]`` (that is
    ``T_parent @ dJ[g]``), and ``W2`` the matching second derivatives.
    """

    __slots__ = ("model", "q", "J", "dJ", "d2J", "T", "Tpar", "W", "W2")

    def __init__(self, model: KinematicModel, q, second: bool = False):
        q = validate_configuration(model, q)
        self.model = model
        self.q = q
        self.J, self.dJ, self.d2J = model_jets(model, q, second)
        self.T = kernels.forward(model.parent, self.J)
        Tpar = np.empty_like(self.T)
        root = model.parent < 0
        Tpar[root] = np.eye(4)
        Tpar[~root] = self.T[model.parent[~root]]
        self.Tpar = Tpar
        Tp = Tpar[model.link_of_dof]
        self.W = np.ascontiguousarray(Tp @ self.dJ)
        self.W2 = np.ascontiguousarray(Tp[:, None] @ self.d2J) if second else None

    def ensure_second(self) -> "Frame":
        if self.W2 is None:
            _, _, self.d2J = model_jets(self.model, self.q, True)
            Tp = self.Tpar[self.model.link_of_dof]
            self.W2 = np.ascontiguousarray(Tp[:, None] @ self.d2J)
        return self

    def twists(self) -> np.ndarray:
        """``Xi[g]`` with ``dT_i/dq_g = Xi[g] @ T_i`` for every link ``i`` moved by ``g``."""
        Tl = self.T[self.model.link_of_dof]
        return self.W @ rigid_inverse(Tl)


def rigid_inverse(T: np.ndarray) -> np.ndarray:
    R = T[..., :3, :3]
    out = np.zeros_like(T)
    Rt = np.swapaxes(R, -1, -2)
    out[..., :3, :3] = Rt
    out[..., :3, 3] = -np.einsum("...ab,...b->...a", Rt, T[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


def forward_pass(model: KinematicModel, q) -> np.ndarray:
    """World transforms ``T_i = T_parent(i) @ T_joint_i(q)`` for every link, shape (N,4,4)."""
    q = validate_configuration(model, q)
    J, _, _ = model_jets(model, q)
    return kernels.forward(model.parent, J)
