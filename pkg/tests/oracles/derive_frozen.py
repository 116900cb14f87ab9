"""Independent oracles for the frozen constants in the test-suite.

Run with ``python3 tests/oracles/derive_frozen.py``. Nothing here imports the
package: path interpolation, weights and expectations are rebuilt from scratch
with mpmath / scipy adaptive quadrature so the frozen numbers do not share a
code route with the implementation.
"""

from __future__ import annotations

import mpmath as mp
import numpy as np
from scipy import integrate

mp.mp.dps = 30

# the reference path used across tests: dyadic level 2 on [0, 1]
P1_TIMES = [0.0, 0.25, 0.5, 0.75, 1.0]
P1_VALUES = [0.1, -0.3, 0.4, 0.2, -0.5]


def p1(s):
    s = mp.mpf(s)
    for k in range(4):
        a, b = P1_TIMES[k], P1_TIMES[k + 1]
        if s <= b:
            w = (s - a) / (b - a)
            return (1 - w) * P1_VALUES[k] + w * P1_VALUES[k + 1]
    return mp.mpf(P1_VALUES[-1])


def ibp(phi, dphi, t):
    pts = [0] + [u for u in P1_TIMES if 0 < u < t] + [t]
    integral = mp.quad(lambda s: p1(s) * dphi(s), pts)
    return phi(t) * p1(t) - integral


def chi(r):
    if r <= 0:
        return mp.mpf(0)
    if r >= 1:
        return mp.mpf(1)
    return 1 / (1 + mp.e ** (1 / r - 1 / (1 - r)))


def dchi(r):
    if r <= 0 or r >= 1:
        return mp.mpf(0)
    c = chi(r)
    return c * (1 - c) * (1 / r**2 + 1 / (1 - r) ** 2)


def cutoff_lift(n, t):
    """y_j = int_0^t phi_{n,j} d^-x for the cutoff weights, by adaptive quadrature."""
    out = []
    for j in range(2**n + 1):
        tj = mp.mpf(j) / 2**n
        phi = lambda s: 1 - chi(4**n * (s - tj))
        dphi = lambda s: -(4**n) * dchi(4**n * (s - tj))
        lo, hi = tj, tj + mp.mpf(1) / 4**n
        pts = sorted({0, t} | {u for u in P1_TIMES if 0 < u < t} | {float(v) for v in (lo, hi) if 0 < v < t})
        integral = mp.quad(lambda s: p1(s) * dphi(s), pts)
        out.append(phi(t) * p1(t) - integral)
    return out


def mollified_sin(n, t):
    """E[sin(polygon_n(y + Z)((t + S) ^ 1))] with Z ~ N(0, sigma^2 I), S = |N| / n.

    polygon(tau) = sum_j l_j(tau) (y_j + Z_j), so E sin = sin(m(tau)) exp(-sigma^2 |l(tau)|^2 / 2).
    """
    y = [float(v) for v in cutoff_lift(n, t)]
    nodes = np.linspace(0.0, 1.0, 2**n + 1)
    sigma = 1.0 / (2**n + 1)

    def inner(tau):
        tau = min(tau, 1.0)
        k = min(int(tau * 2**n), 2**n - 1)
        w = (tau - nodes[k]) * 2**n
        m = (1 - w) * y[k] + w * y[k + 1]
        l2 = (1 - w) ** 2 + w**2
        return np.sin(m) * np.exp(-0.5 * sigma**2 * l2)

    if n == 0:
        return inner(1.0)
    dens = lambda s: 2 * n * np.exp(-0.5 * (n * s) ** 2) / np.sqrt(2 * np.pi)
    brk = [u - t for u in nodes if u > t] 
    horizon = 1.0 - t
    pts = [b for b in brk if 0 < b < horizon]
    body, _ = integrate.quad(lambda s: dens(s) * inner(t + s), 0, horizon, points=pts or None,
                             epsabs=1e-13, epsrel=1e-13, limit=200)
    tail = float(mp.erfc(n * horizon / mp.sqrt(2)))
    return body + tail * inner(1.0)


if __name__ == "__main__":
    print("ibp cos at 0.8:", mp.nstr(ibp(mp.cos, lambda s: -mp.sin(s), mp.mpf("0.8")), 17))
    print("lift (1, e^-s) at 0.6:",
          mp.nstr(ibp(lambda s: 1, lambda s: 0, mp.mpf("0.6")), 17),
          mp.nstr(ibp(lambda s: mp.e ** (-s), lambda s: -mp.e ** (-s), mp.mpf("0.6")), 17))
    for n in range(4):
        print("cutoff lift n", n, [mp.nstr(v, 17) for v in cutoff_lift(n, mp.mpf("0.6"))])
        print("mollified sin n", n, repr(mollified_sin(n, 0.6)))
