"""Compiled kernels against the NumPy reference, and backend selection."""

import os
import subprocess
import sys

import numpy as np
import pytest

from helpers import random_model
from pbad import kernels
from pbad.adjoint import CorrelationRequest, correlation_suite
from pbad.baseline import DynamicsState, mass_and_coriolis
from pbad.kinematics import Frame

COMPILED = "compiled" in kernels.available_backends()
DEFAULT = kernels.BACKEND
needs_compiled = pytest.mark.skipif(not COMPILED, reason="compiled kernels are not built")


def kernel_outputs(k, model, fa, fb, Jd, Jdd):
    m = model
    G = fa.T @ m.S
    return {
        "forward": k.forward(m.parent, fb.J),
        "grad_linear": k.grad_linear(m.parent, m.dof_offsets, m.ndof, fb.J, fb.W, G),
        "hess_linear": k.hess_linear(m.parent, m.dof_offsets, m.ndof, fb.J, fb.dJ, fb.W, fb.W2, G),
        "hess_mixed": k.hess_mixed(m.parent, m.dof_offsets, m.ndof, fa.J, fb.J, fa.W, fb.W, m.S),
        "rates": k.rates(m.parent, fb.J, Jd, Jdd),
    }


def parts(out):
    return [np.asarray(o) for o in (out if isinstance(out, tuple) else (out,))]


@needs_compiled
@pytest.mark.parametrize("seed", range(8))
def test_kernels_agree_on_random_trees(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, int(rng.integers(1, 12)), kinds=("hinge", "universal", "ball", "free"),
                     root=("hinge", "universal", "ball", "free")[seed % 4])
    fa = Frame(m, rng.uniform(-1, 1, m.total_dofs))
    fb = Frame(m, rng.uniform(-1, 1, m.total_dofs), second=True)
    Jd, Jdd = rng.normal(size=fb.J.shape), rng.normal(size=fb.J.shape)
    py = kernel_outputs(kernels.get_backend("python"), m, fa, fb, Jd, Jdd)
    cc = kernel_outputs(kernels.get_backend("compiled"), m, fa, fb, Jd, Jdd)
    for name in py:
        for a, b in zip(parts(py[name]), parts(cc[name])):
            assert a.shape == b.shape, name
            assert np.max(np.abs(a - b), initial=0.0) <= 1e-12 * max(1.0, np.abs(a).max(initial=0.0)), name


@needs_compiled
def test_public_results_agree_across_backends():
    rng = np.random.default_rng(42)
    m = random_model(rng, 9, kinds=("hinge", "universal", "ball"), boxes_only=True)
    req = CorrelationRequest(m, *rng.uniform(-1, 1, (2, m.total_dofs)))
    state = DynamicsState(rng.uniform(-1, 1, m.total_dofs), rng.normal(size=m.total_dofs))
    out = {}
    for name in ("python", "compiled"):
        kernels.set_backend(name)
        try:
            s = correlation_suite(req)
            out[name] = [np.atleast_1d(s.value), s.grad_b, s.hess_bb, s.hess_ab, *mass_and_coriolis(m, state)]
        finally:
            kernels.set_backend(DEFAULT)
    for a, b in zip(out["python"], out["compiled"]):
        assert np.max(np.abs(a - b)) <= 1e-11 * max(1.0, np.abs(a).max())


def test_environment_forces_pure_python():
    env = dict(os.environ, PBAD_PURE_PYTHON="1")
    code = "from pbad import kernels; print(kernels.BACKEND, kernels.get_backend() is kernels.get_backend('python'))"
    p = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert p.returncode == 0, p.stderr
    assert p.stdout.split() == ["python", "True"]


def test_backend_selection():
    assert "python" in kernels.available_backends()
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")
    assert kernels.BACKEND == DEFAULT
    if not COMPILED:
        with pytest.raises(RuntimeError):
            kernels.get_backend("compiled")
