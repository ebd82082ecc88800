"""Compiled versus pure-Python adjoint kernels.

Times every kernel on chains of several lengths with both backends, checks
that they agree, and writes ``kernels.csv`` (one row per kernel and size).

    python3 benchmarks/bench_kernels.py [--sizes 10 20 40 80] [--out DIR]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from pbad import kernels
from pbad.bench import _best_time, write_rows
from pbad.kinematics import Frame
from pbad.scene import chain_scene, scene_from_dict


def _parts(out) -> list[np.ndarray]:
    return [np.asarray(o) for o in (out if isinstance(out, tuple) else (out,))]


def kernel_calls(model, fa: Frame, fb: Frame, G: np.ndarray, Jd: np.ndarray, Jdd: np.ndarray):
    m = model
    return {
        "forward": lambda k: k.forward(m.parent, fb.J),
        "grad_linear": lambda k: k.grad_linear(m.parent, m.dof_offsets, m.ndof, fb.J, fb.W, G),
        "hess_linear": lambda k: k.hess_linear(m.parent, m.dof_offsets, m.ndof, fb.J, fb.dJ, fb.W, fb.W2, G),
        "hess_mixed": lambda k: k.hess_mixed(m.parent, m.dof_offsets, m.ndof, fa.J, fb.J, fa.W, fb.W, m.S),
        "rates": lambda k: k.rates(m.parent, fb.J, Jd, Jdd),
    }


def run(sizes, seed: int = 0, min_total: float = 0.2) -> list[dict]:
    if "compiled" not in kernels.available_backends():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    py, cc = kernels.get_backend("python"), kernels.get_backend("compiled")
    rng = np.random.default_rng(seed)
    rows = []
    for N in sizes:
        model = scene_from_dict(chain_scene(N)).model
        qa = rng.uniform(-0.5, 0.5, model.total_dofs)
        fa = Frame(model, qa)
        fb = Frame(model, qa + rng.uniform(-0.1, 0.1, model.total_dofs), second=True)
        G = fa.T @ model.S
        Jd, Jdd = rng.normal(size=fb.J.shape), rng.normal(size=fb.J.shape)
        for name, call in kernel_calls(model, fa, fb, G, Jd, Jdd).items():
            out_py, out_cc = call(py), call(cc)
            diff = max(float(np.max(np.abs(a - b))) for a, b in zip(_parts(out_py), _parts(out_cc)))
            t_py = _best_time(lambda: call(py), min_total)
            t_cc = _best_time(lambda: call(cc), min_total)
            rows.append(dict(kernel=name, n_links=N, python_time=t_py, compiled_time=t_cc,
                             speedup=t_py / t_cc, max_abs_difference=diff))
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[10, 20, 40, 80])
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    rows = run(args.sizes, args.seed)
    print(f"{'kernel':12s} {'N':>5s} {'python s':>11s} {'compiled s':>11s} {'speedup':>8s} {'max diff':>10s}")
    for r in rows:
        print(f"{r['kernel']:12s} {r['n_links']:5d} {r['python_time']:11.3e} {r['compiled_time']:11.3e} "
              f"{r['speedup']:8.1f} {r['max_abs_difference']:10.2e}")
    path = write_rows(Path(args.out) / "kernels.csv", rows)
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
