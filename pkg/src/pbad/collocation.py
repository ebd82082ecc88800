"""Position-based collocation schemes.

A scheme of order ``K`` fits a degree-``K`` polynomial through ``K + 1``
workspace samples in local time ``tau = (t - k dt) / dt``: two history
samples at ``tau = alpha_{K-2} - 1`` and ``tau = 0`` (``alpha_0 = 0``) and the
``K - 1`` unknowns at ``tau = alpha_1 .. alpha_{K-1} = 1``.  The interior
alphas are Legendre roots mapped to ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_ORDER = 6
_NEWTON_TOL = 1e-14


def _legendre(n: int, x: float) -> tuple[float, float]:
    """``L_n(x)`` and ``L_n'(x)`` by the three-term recurrence."""
    p0, p1 = 1.0, x
    if n == 0:
        return 1.0, 0.0
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


def legendre_points(K: int) -> np.ndarray:
    """Collocation fractions ``alpha_1 < ... < alpha_{K-1} = 1``.

    The first ``K - 2`` are roots of ``L_{K-2}(2 alpha - 1)``, found by Newton
    iteration from Chebyshev guesses.
    """
    K = int(K)
    if K < 2:
        raise ValueError(f"collocation order must be >= 2, got {K}")
    if K > MAX_ORDER:
        raise ValueError(f"collocation order above {MAX_ORDER} is not supported")
    n = K - 2
    roots = []
    for i in range(1, n + 1):
        x = np.cos((2 * i - 1) * np.pi / (2 * n))
        for _ in range(100):
            p, dp = _legendre(n, x)
            step = p / dp
            x -= step
            if abs(step) < _NEWTON_TOL:
                break
        roots.append(x)
    alphas = sorted(0.5 * (np.asarray(roots) + 1.0))
    out = np.array(list(alphas) + [1.0])
    out.setflags(write=False)
    return out


def _monomials(t: float, K: int, deriv: int = 0) -> np.ndarray:
    """``d^deriv/dt^deriv (1, t, ..., t^K)``."""
    out = np.zeros(K + 1)
    for p in range(deriv, K + 1):
        c = 1.0
        for r in range(deriv):
            c *= p - r
        out[p] = c * t ** (p - deriv)
    return out


@dataclass(frozen=True, eq=False)
class CollocationScheme:
    """Interpolation data for one order.

    ``H = V^-1`` with ``V[:, j] = (1, tau_j, ..., tau_j^K)``, so a sample row
    ``P_* (K+1 columns)`` gives ``P(tau) = P_* H m(tau)``.  ``H2`` is the
    matching second-derivative basis in normalized time (divide by ``dt**2``
    at use site).  ``w1[u]``/``w2[u]`` are first/second derivative weights over
    all samples at unknown instant ``u``; also normalized.
    """

    K: int
    dt: float
    alphas: np.ndarray
    times: np.ndarray
    H: np.ndarray
    H2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    @property
    def n_unknown(self) -> int:
        return self.K - 1

    @property
    def n_history(self) -> int:
        return 2

    def interpolate(self, samples: np.ndarray, tau: float, deriv: int = 0) -> np.ndarray:
        """Evaluate the fitted polynomial (or a derivative in normalized time)."""
        weights = self.H @ _monomials(tau, self.K, deriv)
        return np.tensordot(weights, np.asarray(samples, dtype=float), axes=(0, 0))


@lru_cache(maxsize=None)
def _normalized_scheme(K: int):
    alphas = legendre_points(K)
    prev = alphas[-2] - 1.0 if K > 2 else -1.0
    times = np.concatenate([[prev, 0.0], alphas])
    V = np.stack([_monomials(t, K) for t in times], axis=1)
    H = np.linalg.inv(V)
    D2 = np.zeros((K + 1, K + 1))
    for p in range(2, K + 1):
        D2[p, p - 2] = p * (p - 1)
    H2 = H @ D2
    w1 = np.stack([H @ _monomials(t, K, 1) for t in alphas])
    w2 = np.stack([H @ _monomials(t, K, 2) for t in alphas])
    for a in (alphas, times, H, H2, w1, w2):
        a.setflags(write=False)
    return alphas, times, H, H2, w1, w2


def build_scheme(K: int, dt: float) -> CollocationScheme:
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    alphas, times, H, H2, w1, w2 = _normalized_scheme(int(K))
    return CollocationScheme(int(K), float(dt), alphas, times, H, H2, w1, w2)
