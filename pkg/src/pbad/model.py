"""Articulated-body data model: joints, link geometry and mass-weighted body integrals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

JOINT_DOFS = {"hinge": 1, "universal": 2, "ball": 3, "free": 6}

# Upper bound on local DOFs; second-derivative arrays are padded to this width.
MAX_JOINT_DOFS = 6


class ModelError(ValueError):
    """Raised for an invalid link/joint description."""


class ConfigurationError(ValueError):
    """Raised when a configuration vector does not fit its model."""


def _unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(3)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise ModelError(f"{name} must be a non-zero finite 3-vector")
    return v / n


@dataclass(frozen=True, eq=False)
class JointSpec:
    """Joint connecting a link to its parent.

    ``offset`` is the fixed 4x4 transform from the parent body frame to the
    joint frame; the joint motion is applied after it.  ``universal`` joints
    rotate about ``axis`` and then about ``axis2`` (both in the joint frame).
    ``free`` joints translate first and then rotate by a rotation vector.
    """

    kind: str
    axis: np.ndarray | None = None
    axis2: np.ndarray | None = None
    offset: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if self.kind not in JOINT_DOFS:
            raise ModelError(f"unknown joint kind {self.kind!r}")
        if self.kind in ("hinge", "universal"):
            if self.axis is None:
                raise ModelError(f"{self.kind} joint needs an axis")
            object.__setattr__(self, "axis", _unit(self.axis, "hinge axis"))
        if self.kind == "universal":
            if self.axis2 is None:
                raise ModelError("universal joint needs axis2")
            object.__setattr__(self, "axis2", _unit(self.axis2, "universal axis2"))
        off = np.array(self.offset, dtype=float)
        if off.shape != (4, 4):
            raise ModelError("joint offset must be a 4x4 matrix")
        R = off[:3, :3]
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-10, rtol=0.0):
            raise ModelError("joint offset rotation block is not orthonormal")
        if not np.array_equal(off[3], [0.0, 0.0, 0.0, 1.0]):
            raise ModelError("joint offset bottom row must be (0, 0, 0, 1)")
        off.setflags(write=False)
        object.__setattr__(self, "offset", off)

    @property
    def dof_count(self) -> int:
        return JOINT_DOFS[self.kind]


@dataclass(frozen=True)
class Box:
    size: tuple[float, float, float]
    density: float
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def vertices(self) -> np.ndarray:
        half = 0.5 * np.asarray(self.size, dtype=float)
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return np.asarray(self.center, dtype=float) + signs * half


@dataclass(frozen=True)
class PointMasses:
    masses: tuple[float, ...]
    positions: tuple[tuple[float, float, float], ...]


@dataclass(frozen=True, eq=False)
class LinkSpec:
    parent: int | None
    joint: JointSpec
    geometry: Box | PointMasses
    contact_samples: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class BodyIntegral:
    """``S = integral of rho [p;1][p;1]^T dp`` over one body, with its mass."""

    S: np.ndarray
    mass: float


def box_integral(box: Box) -> BodyIntegral:
    w, h, d = (float(s) for s in box.size)
    if min(w, h, d) <= 0.0:
        raise ModelError("box dimensions must be positive")
    if not box.density > 0.0:
        raise ModelError("box density must be positive")
    m = box.density * w * h * d
    c = np.asarray(box.center, dtype=float).reshape(3)
    S = np.empty((4, 4))
    S[:3, :3] = m * (np.outer(c, c) + np.diag([w * w, h * h, d * d]) / 12.0)
    S[:3, 3] = S[3, :3] = m * c
    S[3, 3] = m
    return BodyIntegral(S, m)


def point_mass_integral(pm: PointMasses) -> BodyIntegral:
    masses = np.asarray(pm.masses, dtype=float).reshape(-1)
    pos = np.asarray(pm.positions, dtype=float).reshape(-1, 3)
    if len(masses) == 0 or len(masses) != len(pos):
        raise ModelError("point_masses needs matching, non-empty mass/position lists")
    if np.any(~(masses > 0.0)):
        raise ModelError("point masses must be positive")
    ph = np.hstack([pos, np.ones((len(pos), 1))])
    # Summing sorted outer products keeps S independent of listing order.
    terms = masses[:, None, None] * ph[:, :, None] * ph[:, None, :]
    S = np.sort(terms, axis=0).sum(axis=0)
    return BodyIntegral(S, float(S[3, 3]))


@dataclass(frozen=True, eq=False)
class KinematicModel:
    """Immutable articulated tree plus the flat arrays the derivative kernels use."""

    links: tuple[LinkSpec, ...]
    body_integrals: tuple[BodyIntegral, ...]
    dof_offsets: np.ndarray
    total_dofs: int
    parent: np.ndarray
    ndof: np.ndarray
    link_of_dof: np.ndarray
    S: np.ndarray
    mass: np.ndarray
    children: tuple[tuple[int, ...], ...]
    # dof_mask[i, g] is True when DOF g moves link i (belongs to i or an ancestor)
    dof_mask: np.ndarray
    samples: tuple[np.ndarray, ...]

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def ancestors(self, i: int) -> list[int]:
        out = []
        p = self.parent[i]
        while p >= 0:
            out.append(int(p))
            p = self.parent[p]
        return out

    def dofs(self, i: int) -> slice:
        s = int(self.dof_offsets[i])
        return slice(s, s + int(self.ndof[i]))


def build_model(links: Sequence[LinkSpec]) -> KinematicModel:
    """Validate a topologically ordered link list and precompute body integrals."""
    links = tuple(links)
    if not links:
        raise ModelError("model needs at least one link")
    N = len(links)
    parent = np.full(N, -1, dtype=np.int64)
    for i, link in enumerate(links):
        if link.parent is not None:
            p = int(link.parent)
            if not 0 <= p < i:
                raise ModelError(f"link {i}: parent {p} violates topological order")
            parent[i] = p
    integrals = []
    for i, link in enumerate(links):
        geo = link.geometry
        try:
            if isinstance(geo, Box):
                integrals.append(box_integral(geo))
            elif isinstance(geo, PointMasses):
                integrals.append(point_mass_integral(geo))
            else:
                raise ModelError(f"unsupported geometry {type(geo).__name__}")
        except ModelError as exc:
            raise ModelError(f"link {i}: {exc}") from None
    ndof = np.array([l.joint.dof_count for l in links], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(ndof)[:-1]]).astype(np.int64)
    n = int(ndof.sum())
    link_of_dof = np.repeat(np.arange(N, dtype=np.int64), ndof)
    children = [[] for _ in range(N)]
    for i in range(N):
        if parent[i] >= 0:
            children[parent[i]].append(i)
    mask = np.zeros((N, n), dtype=bool)
    for i in range(N):
        if parent[i] >= 0:
            mask[i] = mask[parent[i]]
        mask[i, offsets[i]:offsets[i] + ndof[i]] = True
    samples = []
    for link in links:
        if link.contact_samples is not None:
            s = np.asarray(link.contact_samples, dtype=float).reshape(-1, 3)
        elif isinstance(link.geometry, Box):
            s = link.geometry.vertices()
        else:
            s = np.asarray(link.geometry.positions, dtype=float).reshape(-1, 3)
        s.setflags(write=False)
        samples.append(s)
    S = np.ascontiguousarray([b.S for b in integrals])
    mass = np.array([b.mass for b in integrals])
    for arr in (parent, ndof, offsets, link_of_dof, S, mass, mask):
        arr.setflags(write=False)
    return KinematicModel(
        links=links,
        body_integrals=tuple(integrals),
        dof_offsets=offsets,
        total_dofs=n,
        parent=parent,
        ndof=ndof,
        link_of_dof=link_of_dof,
        S=S,
        mass=mass,
        children=tuple(tuple(c) for c in children),
        dof_mask=mask,
        samples=tuple(samples),
    )


def validate_configuration(model: KinematicModel, q) -> np.ndarray:
    """Return ``q`` as a float vector, raising if its length or entries are bad."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.shape[0] != model.total_dofs:
        raise ConfigurationError(
            f"configuration length {q.shape} does not match model DOF count {model.total_dofs}"
        )
    if not np.all(np.isfinite(q)):
        raise ConfigurationError("configuration has non-finite entries")
    return q


def pose(translation=(0.0, 0.0, 0.0), rotation_vector=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Rigid 4x4 transform from a translation and a rotation vector."""
    from .kinematics import rotation_from_vector

    T = np.eye(4)
    T[:3, :3] = rotation_from_vector(np.asarray(rotation_vector, dtype=float))
    T[:3, 3] = translation
    return T
