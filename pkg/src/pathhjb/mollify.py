"""Cylindrical mollification of path coefficients.

A coefficient h(t, x, a) is replaced by

    hbar_n(t, y, a) = E[h((t + S) ^ T, polygon_n(y + Z), a)],

with S half-normal of scale 1/n, Z ~ N(0, (d (2^n + 1))^{-2} I) and polygon_n the
dyadic polygonal through the node values. Reading y through the cutoff weights
phi_{n,j} gives the smooth non-anticipative functional h_n(t, x, a).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erfc, expit

from .coefficients import CoefficientSpec
from .forward import Weight
from .functional import CylindricalFunctional
from .paths import DomainError, GaugePoint, dyadic_times, oscillation
from .rng import STREAM_MOLLIFIER, stream

__all__ = [
    "chi",
    "chi_prime",
    "cutoff",
    "cutoff_weight",
    "cutoff_weights",
    "MollifierConfig",
    "MollifiedFunctional",
    "mollified_coefficient",
    "error_bound_rhs",
    "regularity_check",
    "half_normal_rule",
]

_EXP_CLAMP = 700.0
_SQRT2PI = np.sqrt(2.0 * np.pi)
_RAMP_PANELS = 8


def _chi_arg(r):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        arg = 1.0 / r - 1.0 / (1.0 - r)
    return np.clip(arg, -_EXP_CLAMP, _EXP_CLAMP)


def chi(r):
    """Smooth step: 0 for r <= 0, 1 for r >= 1, 1 / (1 + e^{1/r - 1/(1-r)}) between."""
    r = np.asarray(r, dtype=float)
    inner = (r > 0) & (r < 1)
    out = np.where(r >= 1, 1.0, 0.0)
    if np.any(inner):
        out = out.copy()
        out[inner] = expit(-_chi_arg(r[inner]))
    return out if out.ndim else float(out)


def chi_prime(r):
    """Derivative chi(1 - chi)(1/r^2 + 1/(1-r)^2) inside (0, 1), zero outside."""
    r = np.asarray(r, dtype=float)
    inner = (r > 0) & (r < 1)
    out = np.zeros_like(r)
    if np.any(inner):
        ri = r[inner]
        a = _chi_arg(ri)
        # once the exponent saturates the true derivative is below 1e-290
        live = np.abs(a) < _EXP_CLAMP
        vals = np.zeros_like(ri)
        rl = ri[live]
        vals[live] = expit(-a[live]) * expit(a[live]) * (1.0 / rl**2 + 1.0 / (1.0 - rl) ** 2)
        out[inner] = vals
    return out if out.ndim else float(out)


def cutoff(n: int, j: int, r, T: float = 1.0):
    """phi_{n,j}(r) and its derivative.

    Equal to 1 up to t_j = j T / 2^n, then 1 - chi(4^n (r - t_j)).
    """
    if not (0 <= j <= 2**n):
        raise DomainError(f"cutoff index {j} outside 0..{2**n}")
    tj = j * T / 2**n
    scale = 4.0**n
    u = scale * (np.asarray(r, dtype=float) - tj)
    return 1.0 - chi(u), -scale * chi_prime(u)


def cutoff_weight(n: int, j: int, T: float = 1.0) -> Weight:
    tj = j * T / 2**n
    return Weight(
        lambda s: cutoff(n, j, s, T)[0],
        lambda s: cutoff(n, j, s, T)[1],
        name=f"cutoff({n},{j})",
        # the ramp of phi' is steep, so it gets its own finer quadrature panels
        knots=tuple(tj + 4.0**-n * k / _RAMP_PANELS for k in range(_RAMP_PANELS + 1)),
    )


def cutoff_weights(n: int, T: float = 1.0) -> tuple[Weight, ...]:
    return tuple(cutoff_weight(n, j, T) for j in range(2**n + 1))


def half_normal_rule(n: int, t: float, T: float, nodes: int = 32):
    """Quadrature for E[F((t + S) ^ T)] with S = |N(0,1)| / n.

    Substituting u = n s, the part u < n (T - t) uses Gauss-Legendre against the
    half-normal density; the remaining mass sits at the clamped time T.

    Returns (times, weights, u_values); the last node carries the tail mass.
    For n = 0 all mass sits at T.
    """
    if n == 0:
        return np.array([T]), np.array([1.0]), np.array([np.inf])
    u_cut = min(n * (T - t), 10.0)
    x, w = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * u_cut * (x + 1.0)
    wu = 0.5 * u_cut * w * 2.0 * np.exp(-0.5 * u**2) / _SQRT2PI
    tail = erfc(u_cut / np.sqrt(2.0))
    times = np.append(np.minimum(t + u / n, T), min(t + u_cut / n, T))
    weights = np.append(wu, tail)
    return times, weights, np.append(u, u_cut)


@dataclass(frozen=True)
class MollifierConfig:
    """Parameters of the mollified coefficient.

    Parameters
    ----------
    n : int
        Dyadic level; the lift uses 2^n + 1 cutoff weights.
    mc_samples : int
        Gaussian samples for the z-integral (antithetic pairs when even).
    time_quadrature_nodes : int
        Gauss nodes for the s-integral.
    seed : int
    """

    n: int
    mc_samples: int = 256
    time_quadrature_nodes: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise DomainError("n must be nonnegative")
        if self.mc_samples < 1:
            raise DomainError("mc_samples must be at least 1")


class _MollifiedCore:
    """Evaluator of hbar_n(t, y, a) for one action, with kernel-derivative partials."""

    def __init__(self, h: CoefficientSpec, cfg: MollifierConfig, a, T: float, d: int):
        self.h, self.cfg, self.a, self.T, self.d = h, cfg, a, T, d
        n = cfg.n
        self.nodes = dyadic_times(n, T)
        self.D = d * (2**n + 1)
        self.sigma = 1.0 / self.D
        M = cfg.mc_samples
        g = stream(cfg.seed, STREAM_MOLLIFIER, n, d)
        if M % 2 == 0:
            half = g.standard_normal((M // 2, self.D))
            z = np.vstack([half, -half])
            self.pairs = M // 2
        else:
            z = g.standard_normal((M, self.D))
            self.pairs = 0
        self.z = z * self.sigma

    def _h_batch(self, times, Y):
        """h at each (time, polygon) combination: Y has shape (P, D); returns (Q, P, ...)."""
        Q, P = times.size, Y.shape[0]
        vals = np.broadcast_to(Y.reshape(P, -1, self.d), (Q, P, self.nodes.size, self.d))
        out = self.h.evaluate_batch(
            np.repeat(times, P), self.nodes, vals.reshape(Q * P, self.nodes.size, self.d), self.a, self.T
        )
        return out.reshape((Q, P) + out.shape[1:])

    def _rule(self, t):
        return half_normal_rule(self.cfg.n, t, self.T, self.cfg.time_quadrature_nodes)

    def samples(self, t: float, y) -> np.ndarray:
        """Per-z-sample s-averaged values, shape (M, ...)."""
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.D:
            raise DomainError(f"expected {self.D} lifted coordinates, got {y.size}")
        times, w, _ = self._rule(t)
        hv = self._h_batch(times, y[None, :] + self.z)
        return np.tensordot(w, hv, axes=(0, 0))

    def evaluate(self, t: float, y) -> tuple[np.ndarray, np.ndarray]:
        s = self.samples(t, y)
        if self.pairs:
            p = 0.5 * (s[: self.pairs] + s[self.pairs :])
        else:
            p = s
        mean = s.mean(axis=0)
        err = p.std(axis=0, ddof=1) / np.sqrt(p.shape[0]) if p.shape[0] > 1 else np.zeros_like(mean)
        return mean, err

    def __call__(self, t, y):
        mean = self.evaluate(t, y)[0]
        return float(mean) if np.ndim(mean) == 0 else mean

    def dt(self, t, y):
        """n E[U H(t + U/n)] - eta_n(0) H(t), from differentiating the time kernel."""
        n = self.cfg.n
        if n == 0:
            return 0.0
        y = np.asarray(y, dtype=float).reshape(-1)
        times, w, u = self._rule(t)
        u_cut = u[-1]
        # first moment weights; the tail mass at T carries E[U; U >= u_cut]
        wm = np.append(w[:-1] * u[:-1], 2.0 * np.exp(-0.5 * u_cut**2) / _SQRT2PI)
        times_all = np.append(times, t)
        hv = self._h_batch(times_all, y[None, :] + self.z).mean(axis=1)
        return float(n * wm @ hv[:-1] - (2.0 * n / _SQRT2PI) * hv[-1])

    def _sym(self, t, y):
        times, w, _ = self._rule(t)
        y = np.asarray(y, dtype=float).reshape(-1)
        Y = np.vstack([y[None, :] + self.z, y[None, :] - self.z, y[None, :]])
        hv = np.tensordot(w, self._h_batch(times, Y), axes=(0, 0))
        M = self.z.shape[0]
        return hv[:M], hv[M : 2 * M], hv[-1]

    def dy(self, t, y):
        """E[(h(y+z) - h(y-z)) z] / (2 sigma^2), the antithetic kernel-derivative estimator."""
        hp, hm, _ = self._sym(t, y)
        return ((hp - hm) @ self.z) / (2.0 * self.sigma**2 * self.z.shape[0])

    def dyy(self, t, y):
        """E[(h(y+z) + h(y-z) - 2h(y)) (z z^T - sigma^2 I)] / (2 sigma^4)."""
        hp, hm, h0 = self._sym(t, y)
        c = hp + hm - 2.0 * h0
        zz = np.einsum("m,mi,mj->ij", c, self.z, self.z) - c.sum() * self.sigma**2 * np.eye(self.D)
        return zz / (2.0 * self.sigma**4 * self.z.shape[0])


class MollifiedFunctional(CylindricalFunctional):
    """h_n for one action: a cylindrical functional over the cutoff weights."""

    def evaluate(self, t: float, path) -> tuple[float, float]:
        """(h_n(t, x), Monte-Carlo standard error)."""
        m, e = self.core.evaluate(t, self.lift(path, t))
        return float(m), float(e)


def mollified_coefficient(
    h: CoefficientSpec, cfg: MollifierConfig, actions: Sequence = (None,), T: float = 1.0, d: int = 1
) -> list[MollifiedFunctional]:
    """The mollified coefficients h_n(., ., a), one per action.

    Raises DomainError when h declares no finite Lipschitz constant.
    """
    h.require_declared()
    weights = cutoff_weights(cfg.n, T)
    out = []
    for a in actions:
        core = _MollifiedCore(h, cfg, a, T, d)
        out.append(
            MollifiedFunctional(
                core,
                weights,
                d,
                core_dt=core.dt,
                core_dy=core.dy,
                core_dyy=core.dyy,
                name=f"{h.name}_n{cfg.n}",
                meta={"action": a, "n": cfg.n, "K": h.lipschitz_K, "bound": h.bound},
            )
        )
    return out


def error_bound_rhs(h: CoefficientSpec, n: int, p: GaugePoint, d: int | None = None) -> float:
    """3K osc(x, t, 2^{-n}) + 2K / sqrt(d (2^n + 1)) + int_0^inf 2 phi(r) w((t + r/n) ^ T - t) dr.

    The oscillation window is scaled by max(T, 1) so that it covers the dyadic mesh
    T / 2^n also when T > 1. For n = 0 the time term is w(T - t).
    """
    h.require_declared()
    K = float(h.lipschitz_K)
    d = p.path.d if d is None else d
    T, t = p.path.T, p.t
    osc = oscillation(p.path, t, max(T, 1.0) / 2**n)
    if n == 0:
        time_term = float(h.w(T - t))
    else:
        x, w = np.polynomial.legendre.leggauss(64)
        r = 5.0 * (x + 1.0)
        dens = 5.0 * w * 2.0 * np.exp(-0.5 * r**2) / _SQRT2PI
        time_term = float(dens @ h.w(np.minimum(t + r / n, T) - t))
        time_term += float(erfc(10.0 / np.sqrt(2.0)) * h.w(min(t + 10.0 / n, T) - t))
    return 3.0 * K * osc + 2.0 * K / np.sqrt(d * (2**n + 1)) + time_term


def regularity_check(
    hbar: CylindricalFunctional,
    n: int,
    samples: int = 40,
    radius: float = 1.0,
    seed: int = 0,
    T: float | None = None,
    slack: float = 2.0,
) -> dict:
    """Fit K_n in |derivatives| <= K_n (1 + |y|)^q for q in {0, 1}.

    Derivatives are the core's partials (for mollified coefficients, the
    kernel-derivative estimators). K_n is fitted on |y| <= 4 radius and the
    envelope is tested on |y| <= 16 radius with the given slack factor, so
    that a derivative which still grows with |y| is caught.
    """
    rng = np.random.default_rng(seed)
    D = hbar.dim
    T = 1.0 if T is None else T

    def draw(r, k):
        y = rng.normal(size=(k, D))
        y *= (r * rng.uniform(0, 1, size=(k, 1)) ** (1.0 / D)) / np.linalg.norm(y, axis=1, keepdims=True)
        return y, rng.uniform(0, T, size=k)

    def mags(ys, ts):
        rows = []
        for y, t in zip(ys, ts):
            dt, dy, dyy = hbar.partials(float(t), y)
            rows.append([abs(dt), float(np.linalg.norm(dy)), float(np.linalg.norm(dyy, 2))])
        return np.array(rows)

    yi, ti = draw(4.0 * radius, samples)
    yo, to = draw(16.0 * radius, samples)
    mi, mo = mags(yi, ti), mags(yo, to)
    ni = 1.0 + np.linalg.norm(yi, axis=1)
    no = 1.0 + np.linalg.norm(yo, axis=1)
    K, holds = {}, {}
    for q in (0, 1):
        K[q] = float(np.max(mi.max(axis=1) / ni**q))
        holds[q] = bool(np.all(mo.max(axis=1) <= slack * K[q] * no**q + 1e-12))
    return {
        "n": n,
        "K_n": K,
        "holds": holds,
        "max_dt": float(max(mi[:, 0].max(), mo[:, 0].max())),
        "max_dy": float(max(mi[:, 1].max(), mo[:, 1].max())),
        "max_dyy": float(max(mi[:, 2].max(), mo[:, 2].max())),
    }
