"""Backend selection for the adjoint kernels.

The compiled extension ``pbad._kernels`` is used when importable; otherwise,
or when the environment variable ``PBAD_PURE_PYTHON`` is set to a non-empty
value other than ``0``, the NumPy reference in ``pbad._kernels_py`` is used.
"""

import os

from . import _kernels_py

_FORCE_PURE = os.environ.get("PBAD_PURE_PYTHON", "") not in ("", "0")

try:
    if _FORCE_PURE:
        raise ImportError("pure Python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_backend = _compiled if _compiled is not None else _kernels_py
BACKEND = "compiled" if _compiled is not None else "python"


def available_backends() -> list[str]:
    return ["python"] + (["compiled"] if _compiled is not None else [])


def get_backend(name: str | None = None):
    if name is None:
        return _backend
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def set_backend(name: str) -> None:
    """Switch the process-wide backend (used by benchmarks and tests)."""
    global _backend, BACKEND
    _backend = get_backend(name)
    BACKEND = name


def forward(parent, J):
    return _backend.forward(parent, J)


def grad_linear(parent, dof_start, ndof, J, W, G):
    return _backend.grad_linear(parent, dof_start, ndof, J, W, G)


def hess_linear(parent, dof_start, ndof, J, dJ, W, W2, G):
    return _backend.hess_linear(parent, dof_start, ndof, J, dJ, W, W2, G)


def hess_mixed(parent, dof_start, ndof, Ja, Jb, Wa, Wb, S):
    return _backend.hess_mixed(parent, dof_start, ndof, Ja, Jb, Wa, Wb, S)


def rates(parent, J, Jd, Jdd):
    return _backend.rates(parent, J, Jd, Jdd)
