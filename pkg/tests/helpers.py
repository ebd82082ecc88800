"""Random models and finite-difference utilities shared by the tests."""

import numpy as np

from pbad.model import Box, JointSpec, LinkSpec, PointMasses, build_model, pose


def random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_joint(rng, kind):
    off = pose(rng.uniform(-0.5, 0.5, 3), rng.uniform(-1.0, 1.0, 3))
    if kind == "hinge":
        return JointSpec("hinge", axis=random_unit(rng), offset=off)
    if kind == "universal":
        a = random_unit(rng)
        b = np.cross(a, random_unit(rng))
        return JointSpec("universal", axis=a, axis2=b, offset=off)
    return JointSpec(kind, offset=off)


def random_model(rng, n_links, kinds=("hinge", "ball", "universal"), tree=True, root="free",
                 boxes_only=False):
    """Random tree; point-mass bodies can leave a DOF without inertia unless ``boxes_only``."""
    links = []
    for i in range(n_links):
        kind = root if i == 0 and root else kinds[rng.integers(len(kinds))]
        parent = None if i == 0 else (int(rng.integers(i)) if tree else i - 1)
        if boxes_only or rng.random() < 0.7:
            geo = Box(tuple(rng.uniform(0.1, 0.6, 3)), float(rng.uniform(100, 2000)), tuple(rng.uniform(-0.2, 0.2, 3)))
        else:
            k = int(rng.integers(1, 4))
            geo = PointMasses(tuple(rng.uniform(0.1, 2.0, k)), tuple(map(tuple, rng.uniform(-0.3, 0.3, (k, 3)))))
        links.append(LinkSpec(parent, random_joint(rng, kind), geo))
    return build_model(links)


def hinge_chain(n, axis=(0.0, 0.0, 1.0), length=1.0, box=None):
    links = []
    for i in range(n):
        off = np.eye(4) if i == 0 else pose((length, 0.0, 0.0))
        geo = box or Box((length, 0.1, 0.1), 1000.0, (0.5 * length, 0.0, 0.0))
        links.append(LinkSpec(None if i == 0 else i - 1, JointSpec("hinge", axis=axis, offset=off), geo))
    return build_model(links)


def central_gradient(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def central_jacobian(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def naive_transforms(model, q, subs=None):
    """World transforms by explicit products, with ``subs[(link, k)]`` replacing a joint factor.

    Used as a direct-differentiation oracle: substituting ``d1``/``d2`` of a
    joint jet for its value differentiates every descendant transform.
    """
    from pbad.kinematics import joint_jet

    subs = subs or {}
    jets = [joint_jet(l.joint, q[model.dofs(i)]) for i, l in enumerate(model.links)]
    out = []
    for i in range(model.n_links):
        path = [i] + model.ancestors(i)
        if any(j not in path for j in subs):
            out.append(np.zeros((4, 4)))
            continue
        T = np.eye(4)
        for j in reversed(path):
            T = T @ subs.get(j, jets[j].value)
        out.append(T)
    return np.array(out), jets


def naive_correlation(model, qa, qb):
    """Value, gradient, Hessian and mixed Hessian of the correlation by direct products."""
    Ta, jets_a = naive_transforms(model, qa)
    Tb, jets_b = naive_transforms(model, qb)
    S, n = model.S, model.total_dofs
    value = sum(np.trace(Ta[i].T @ Tb[i] @ S[i]) for i in range(model.n_links)) - model.total_mass
    owner = [(int(model.link_of_dof[g]), g - int(model.dof_offsets[model.link_of_dof[g]])) for g in range(n)]

    def dT(q, jets, g):
        i, k = owner[g]
        return naive_transforms(model, q, {i: jets[i].d1[k]})[0]

    dTa = [dT(qa, jets_a, g) for g in range(n)]
    dTb = [dT(qb, jets_b, g) for g in range(n)]
    grad = np.array([sum(np.trace(Ta[i].T @ dTb[g][i] @ S[i]) for i in range(model.n_links)) for g in range(n)])
    hbb = np.zeros((n, n))
    hab = np.zeros((n, n))
    for g in range(n):
        for h in range(n):
            (i, k), (j, l) = owner[g], owner[h]
            if i == j:
                d2 = naive_transforms(model, qb, {i: jets_b[i].d2[k, l]})[0]
            else:
                d2 = naive_transforms(model, qb, {i: jets_b[i].d1[k], j: jets_b[j].d1[l]})[0]
            hbb[g, h] = sum(np.trace(Ta[m].T @ d2[m] @ S[m]) for m in range(model.n_links))
            hab[g, h] = sum(np.trace(dTa[g][m].T @ dTb[h][m] @ S[m]) for m in range(model.n_links))
    return value, grad, hbb, hab


# acceptance outcomes, printed in the terminal summary by conftest
ACCEPTANCE: dict = {}


def record_criterion(number: int, checks: list[tuple[str, bool]], elapsed: float) -> bool:
    """Store one criterion line; every sub-check must hold for a pass."""
    ok = all(passed for _, passed in checks)
    detail = "; ".join(f"{text} [{'ok' if passed else 'FAIL'}]" for text, passed in checks)
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} ({elapsed:.1f} s) {detail}"
    print(ACCEPTANCE[number])
    return ok
