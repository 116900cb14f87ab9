"""Smooth gauge functions on path space and a finite-set smooth variational principle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .functional import PathFunctional, horizontal_derivative, vertical_derivative
from .paths import DomainError, GaugePoint, merge_times

__all__ = [
    "GaugeValue",
    "INF",
    "kappa_infinity",
    "kappa_parts",
    "kappa_derivatives",
    "rho_infinity",
    "chi_infinity",
    "phi_comparison",
    "PerturbationPhi",
    "VPResult",
    "borwein_preiss",
    "verify_vp",
]


@dataclass(frozen=True)
class GaugeValue:
    """A nonnegative gauge value or the +infinity sentinel."""

    value: float = 0.0
    infinite: bool = False

    def __float__(self):
        if self.infinite:
            raise DomainError("infinite gauge value has no float representation")
        return float(self.value)

    def le(self, bound: float) -> bool:
        return (not self.infinite) and self.value <= bound

    def __repr__(self):
        return "GaugeValue(+inf)" if self.infinite else f"GaugeValue({self.value!r})"


INF = GaugeValue(0.0, True)


def kappa_parts(a: GaugePoint, b: GaugePoint) -> tuple[float, float]:
    """(M, e) with M = ||x(. ^ t) - x'(. ^ t')||_T and e = |x(t) - x'(t')|."""
    xa, xb = a.path, b.path
    s = merge_times(xa.times[xa.times < a.t], xb.times[xb.times < b.t], [a.t, b.t], T=max(xa.T, xb.T))
    diff = xa(np.minimum(s, a.t)) - xb(np.minimum(s, b.t))
    norms = np.einsum("ij,ij->i", diff, diff)
    M = float(np.sqrt(norms.max()))
    e_vec = xa(a.t) - xb(b.t)
    e = float(np.sqrt(e_vec @ e_vec))
    return M, min(e, M)


def kappa_infinity(a: GaugePoint, b: GaugePoint) -> float:
    """(M^2 - e^2)^3 / M^4 + 3 e^2, and 0 when M = 0."""
    M, e = kappa_parts(a, b)
    if M == 0.0:
        return 0.0
    M2, e2 = M * M, e * e
    return (M2 - e2) ** 3 / (M2 * M2) + 3.0 * e2


def rho_infinity(a: GaugePoint, b: GaugePoint) -> GaugeValue:
    """|t - t'|^2 + kappa / (1 + kappa) for t >= t', the +infinity sentinel otherwise."""
    if a.t < b.t:
        return INF
    k = kappa_infinity(a, b)
    return GaugeValue((a.t - b.t) ** 2 + k / (1.0 + k))


def chi_infinity(p: GaugePoint, anchor: GaugePoint) -> float:
    k = kappa_infinity(p, anchor)
    return k / (1.0 + k)


def phi_comparison(t):
    """(2/pi) arctan(t^13) + 1 and its derivative (2/pi) 13 t^12 / (1 + t^26)."""
    t = np.asarray(t, dtype=float)
    val = (2.0 / np.pi) * np.arctan(t**13) + 1.0
    der = (2.0 / np.pi) * 13.0 * t**12 / (1.0 + t**26)
    if val.ndim == 0:
        return float(val), float(der)
    return val, der


def kappa_derivatives(a: GaugePoint, center: GaugePoint, h: float = 1e-4):
    """Finite-difference pathwise derivatives of (t, x) -> kappa((t, x), center).

    Only defined for a.t >= center.t, where the gauge is smooth.
    """
    if a.t < center.t:
        raise DomainError("kappa derivatives need a.t >= center.t")
    u = PathFunctional(lambda t, x: kappa_infinity(GaugePoint(t, x), center), "kappa")
    H = horizontal_derivative(u, a, h)
    V1 = vertical_derivative(u, a, 1, h)
    V2 = vertical_derivative(u, a, 2, h)
    return H, V1, V2


@dataclass
class PerturbationPhi:
    """phi = sum_i 2^{-i} rho(., c_i), where the last center repeats forever."""

    centers: list
    indices: list

    @property
    def base(self) -> GaugePoint:
        return self.centers[0]

    def coefficients(self) -> np.ndarray:
        k = len(self.centers)
        c = 0.5 ** np.arange(k)
        c[-1] = 2.0 ** (2 - k)  # geometric tail of the repeated last center
        return c

    def __call__(self, p: GaugePoint) -> GaugeValue:
        total = 0.0
        for c, w in zip(self.centers, self.coefficients()):
            r = rho_infinity(p, c)
            if r.infinite:
                return INF
            total += w * r.value
        return GaugeValue(total)


@dataclass
class VPResult:
    bar: GaugePoint
    bar_index: int
    phi: PerturbationPhi
    trace: list = field(default_factory=list)
    converged: bool = True


def _rho_row(cands: Sequence[GaugePoint], c: GaugePoint):
    vals = np.empty(len(cands))
    ok = np.ones(len(cands), dtype=bool)
    for i, q in enumerate(cands):
        r = rho_infinity(q, c)
        if r.infinite:
            ok[i] = False
            vals[i] = 0.0
        else:
            vals[i] = r.value
    return vals, ok


def borwein_preiss(
    G: Callable[[GaugePoint], float] | Sequence[float],
    candidates: Sequence[GaugePoint],
    delta: float,
    start: int | None = None,
    max_iter: int = 64,
) -> VPResult:
    """Smooth variational principle over a finite candidate set.

    Starting from x_0 with G(x_0) >= max G - delta^2, step i keeps the set
    S_i of candidates whose perturbed value G - delta sum_{k<=i} 2^{-k} rho(., x_k)
    has not dropped below the previous center's, and picks the lowest-index
    candidate of S_i within delta^2 / 4^{i+1} of the sup there. The iteration ends
    when that candidate is an exact maximizer, which becomes the bar point.

    Parameters
    ----------
    G : callable or sequence
        Objective on candidates, or its values in candidate order.
    delta : float in (0, 1)
    start : int, optional
        Index of x_0; defaults to the lowest index meeting the delta^2 condition.
    """
    cands = list(candidates)
    if not cands:
        raise DomainError("candidate set is empty")
    if not (0.0 < delta < 1.0):
        raise DomainError("delta must lie in (0, 1)")
    g = np.array([float(G(p)) for p in cands] if callable(G) else G, dtype=float)
    gmax = g.max()
    if start is None:
        start = int(np.flatnonzero(g >= gmax - delta**2)[0])
    elif g[start] < gmax - delta**2:
        raise DomainError("start point is not a delta^2-maximizer")
    centers, idx = [cands[start]], [start]
    acc, ok = _rho_row(cands, cands[start])
    phi_val = g - delta * acc
    S = ok & (phi_val >= g[start])
    trace = []
    for i in range(max_iter):
        sup = phi_val[S].max()
        tol = delta**2 / 4.0 ** (i + 1)
        nxt = int(np.flatnonzero(S & (phi_val >= sup - tol))[0])
        exact = phi_val[nxt] == sup
        trace.append(
            {"iter": i, "center": nxt, "t": cands[nxt].t, "value": float(phi_val[nxt]), "sup": float(sup),
             "set_size": int(S.sum()), "exact": bool(exact)}
        )
        if exact:
            centers.append(cands[nxt])
            idx.append(nxt)
            return VPResult(cands[nxt], nxt, PerturbationPhi(centers, idx), trace, True)
        level = phi_val[nxt]
        row, ok_row = _rho_row(cands, cands[nxt])
        acc = acc + row * 0.5 ** (i + 1)
        ok &= ok_row
        centers.append(cands[nxt])
        idx.append(nxt)
        phi_val = g - delta * acc
        S = S & ok & (phi_val >= level)
    # no exact maximizer reached: report the best point of the current set
    best = int(np.flatnonzero(S & (phi_val == phi_val[S].max()))[0])
    centers.append(cands[best])
    idx.append(best)
    return VPResult(cands[best], best, PerturbationPhi(centers, idx), trace, False)


def verify_vp(G, candidates: Sequence[GaugePoint], delta: float, res: VPResult, atol: float = 1e-12) -> dict:
    """Check items i)-iv) of the variational principle by exhaustive scan.

    Candidates at d_infinity-distance 0 from the bar point count as the same point.
    """
    cands = list(candidates)
    g = np.array([float(G(p)) for p in cands] if callable(G) else G, dtype=float)
    bar, phi = res.bar, res.phi
    centers = phi.centers
    # i) closeness to every center, and to the base point
    item_i = all(rho_infinity(bar, c).le(delta / 2.0**k + atol) for k, c in enumerate(centers))
    item_i &= rho_infinity(bar, phi.base).le(delta + atol)
    phib = phi(bar)
    item_ii = (not phib.infinite) and g[phi.indices[0]] <= g[res.bar_index] - delta * phib.value + atol
    top = g[res.bar_index] - delta * phib.value if not phib.infinite else -np.inf
    item_iii = True
    worst_gap = np.inf
    for q, gq in zip(cands, g):
        pq = phi(q)
        if pq.infinite:
            continue
        if q is bar or (q.t == bar.t and kappa_infinity(q, bar) == 0.0):
            continue
        gap = top - (gq - delta * pq.value)
        worst_gap = min(worst_gap, gap)
        if not gap > 0.0:
            item_iii = False
    ts = [c.t for c in centers] + [bar.t]
    item_iv = all(ts[k] <= ts[k + 1] for k in range(len(ts) - 1))
    return {"i": bool(item_i), "ii": bool(item_ii), "iii": bool(item_iii), "iv": bool(item_iv),
            "min_strict_gap": float(worst_gap), "ok": bool(item_i and item_ii and item_iii and item_iv)}
