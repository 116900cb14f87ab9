"""Deterministic forward integrals of C^1 weights against piecewise-linear paths.

The integral over [0, t] is defined through integration by parts,
phi(t) x(t) - int_0^t x(s) phi'(s) ds, and evaluated by composite Simpson
quadrature on a grid that contains every path node and every weight knot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .paths import DomainError, Path, merge_times

__all__ = [
    "Weight",
    "integrate_ibp",
    "integrate_regularized",
    "lifted_coordinates",
    "lifted_along",
    "simpson_rule",
    "SIMPSON_SUBDIVISIONS",
]

SIMPSON_SUBDIVISIONS = 64


@dataclass(frozen=True)
class Weight:
    """A continuously differentiable weight phi on [0, T].

    Parameters
    ----------
    value, derivative : callable
        Vectorized evaluators s -> phi(s) and s -> phi'(s).
    name : str
        Label used in reports and for comparing weight lists.
    knots : tuple of float
        Times where phi' changes quickly or loses smoothness; quadrature
        places breakpoints there.
    """

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    name: str = "weight"
    knots: tuple = field(default=())

    def __call__(self, s):
        return np.broadcast_to(self.value(np.asarray(s, dtype=float)), np.shape(s)).astype(float)

    def d(self, s):
        return np.broadcast_to(
            self.derivative(np.asarray(s, dtype=float)), np.shape(s)
        ).astype(float)

    @classmethod
    def constant(cls, c: float = 1.0) -> "Weight":
        c = float(c)
        return cls(lambda s: np.full(np.shape(s), c), lambda s: np.zeros(np.shape(s)), f"const({c:g})")

    @classmethod
    def exponential(cls, rate: float, scale: float = 1.0) -> "Weight":
        """phi(s) = scale * exp(rate * s)."""
        return cls(
            lambda s: scale * np.exp(rate * s),
            lambda s: scale * rate * np.exp(rate * s),
            f"exp({scale:g},{rate:g})",
        )

    @classmethod
    def cosine(cls, omega: float = 1.0, phase: float = 0.0) -> "Weight":
        """phi(s) = cos(omega s + phase)."""
        return cls(
            lambda s: np.cos(omega * s + phase),
            lambda s: -omega * np.sin(omega * s + phase),
            f"cos({omega:g},{phase:g})",
        )

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]) -> "Weight":
        """phi(s) = sum_k coeffs[k] s^k."""
        p = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
        dp = p.deriv()
        return cls(lambda s: p(s), lambda s: dp(s) * np.ones(np.shape(s)), f"poly{tuple(coeffs)}")

    def check_derivative(self, T: float = 1.0, n: int = 50, seed: int = 0, h: float = 1e-5) -> float:
        """Max relative error of the supplied derivative against central differences."""
        rng = np.random.default_rng(seed)
        s = rng.uniform(h, T - h, size=n)
        fd = (self(s + h) - self(s - h)) / (2 * h)
        an = self.d(s)
        return float(np.max(np.abs(fd - an) / np.maximum(1.0, np.abs(an))))


def simpson_rule(breaks: np.ndarray, sub: int = SIMPSON_SUBDIVISIONS):
    """Nodes and weights of composite Simpson with ``sub`` panels per interval.

    Returns arrays of shape (K, sub + 1) for the K intervals between breaks.
    """
    breaks = np.asarray(breaks, dtype=float)
    a, b = breaks[:-1], breaks[1:]
    u = np.linspace(0.0, 1.0, sub + 1)
    nodes = a[:, None] + (b - a)[:, None] * u[None, :]
    coef = np.ones(sub + 1)
    coef[1:-1:2] = 4.0
    coef[2:-1:2] = 2.0
    weights = ((b - a) / (3.0 * sub))[:, None] * coef[None, :]
    return nodes, weights


def _knots(phis: Sequence[Weight]) -> np.ndarray:
    ks = [np.asarray(k, dtype=float) for p in phis for k in [p.knots] if len(k)]
    return np.concatenate(ks) if ks else np.empty(0)


def lifted_along(phis: Sequence[Weight], path: Path, times) -> np.ndarray:
    """Lifted coordinates at several times.

    Returns
    -------
    ndarray, shape (len(times), m, d)
        Entry [k, j] is the integral of phis[j] against the path over [0, times[k]].
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0) or np.any(times > path.T * (1 + 1e-12)):
        raise DomainError("integration times must lie in [0, T]")
    times = np.minimum(times, path.T)
    m, d = len(phis), path.d
    tmax = float(times.max())
    if tmax == 0.0:
        out = np.empty((times.size, m, d))
        for j, p in enumerate(phis):
            out[:, j, :] = p(np.zeros(1))[0] * path.values[0]
        return out
    knots = _knots(phis)
    brk = merge_times(
        [0.0], path.times[path.times < tmax], knots[(knots > 0) & (knots < tmax)], times, T=path.T
    )
    nodes, w = simpson_rule(brk)
    X = path(nodes)  # (K, q, d)
    seg = np.empty((brk.size - 1, m, d))
    for j, p in enumerate(phis):
        seg[:, j, :] = np.einsum("kq,kqd->kd", w * p.d(nodes), X)
    cum = np.concatenate([np.zeros((1, m, d)), np.cumsum(seg, axis=0)])
    idx = np.clip(np.searchsorted(brk, times), 0, brk.size - 1)
    # merge_times may have moved a query time by at most the collapse tolerance
    idx = np.where(np.abs(brk[np.maximum(idx - 1, 0)] - times) < np.abs(brk[idx] - times), idx - 1, idx)
    xt = path(times)  # (k, d)
    out = np.empty((times.size, m, d))
    for j, p in enumerate(phis):
        out[:, j, :] = p(times)[:, None] * xt - cum[idx, j, :]
    return out


def integrate_ibp(phi: Weight, path: Path, t: float) -> np.ndarray:
    """phi(t) x(t) - int_0^t x(s) phi'(s) ds, a vector in R^d."""
    return lifted_along([phi], path, [t])[0, 0]


def lifted_coordinates(phis: Sequence[Weight], path: Path, t: float) -> np.ndarray:
    """y^{t,x} in R^{d m}: block j holds the integral of phis[j]."""
    return lifted_along(phis, path, [t])[0].reshape(-1)


def integrate_regularized(phi: Weight, path: Path, t: float, epsilon: float) -> np.ndarray:
    """Regularized forward integral plus the boundary term phi(0) x(0).

    Evaluates int_0^t phi(s) (x(t ^ (s + eps)) - x(s)) / eps ds by quadrature on
    a grid containing the path nodes, the nodes shifted by -eps and t - eps.
    """
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    t = float(t)
    x0 = path.values[0]
    if t == 0.0:
        return phi(np.zeros(1))[0] * x0
    nodes_t = path.times[path.times < t]
    knots = _knots([phi])
    cand = np.concatenate([nodes_t, nodes_t - epsilon, [t - epsilon], knots])
    brk = merge_times([0.0, t], cand[(cand > 0) & (cand < t)], T=path.T)
    s, w = simpson_rule(brk)
    ahead = path(np.minimum(s + epsilon, t))
    integrand = phi(s)[..., None] * (ahead - path(s)) / epsilon
    return np.einsum("kq,kqd->d", w, integrand) + phi(np.zeros(1))[0] * x0
