"""One-sided viscosity inequalities and classical PDE residuals."""

from __future__ import annotations

import io
from typing import Sequence

import numpy as np

from .control import ControlProblem, hamiltonian
from .functional import (
    CylindricalFunctional,
    PathFunctional,
    cylindrical_derivatives,
    horizontal_derivative,
    vertical_derivative,
)
from .lifted import GridSolution, LiftedProblem
from .paths import DomainError, GaugePoint

__all__ = [
    "test_derivatives",
    "subsolution_lhs",
    "supersolution_lhs",
    "touching_report",
    "classical_residual",
    "scheme_tolerance",
    "residual_csv",
]


def test_derivatives(test, p: GaugePoint):
    """(horizontal, vertical gradient, vertical Hessian) of a test functional at p."""
    if isinstance(test, CylindricalFunctional):
        return cylindrical_derivatives(test, p)
    u = test if isinstance(test, PathFunctional) else PathFunctional(test)
    return horizontal_derivative(u, p), vertical_derivative(u, p, 1), vertical_derivative(u, p, 2)


def subsolution_lhs(problem: ControlProblem, u_value: float, test, p: GaugePoint, extra: float = 0.0) -> float:
    """-d^H phi + F(t, x, u, d^V phi, d^VV phi) - extra; a subsolution needs <= 0 at touching points.

    ``extra`` carries additional second-order terms, such as the epsilon
    Laplacian of the regularized equation.
    """
    if p.t >= p.path.T:
        raise DomainError("the viscosity inequalities are tested at t < T")
    H, V1, V2 = test_derivatives(test, p)
    F = hamiltonian(problem, p.t, p.path, u_value, V1, 0.5 * (V2 + V2.T))
    return float(-H + F - extra)


def supersolution_lhs(
    problem: ControlProblem, u_value: float, test, p: GaugePoint, extra: float = 0.0, reversed: bool = False
) -> float:
    """Same expression as ``subsolution_lhs``; a supersolution needs >= 0.

    With ``reversed=True`` the sign is flipped so that the requirement reads <= 0.
    """
    val = subsolution_lhs(problem, u_value, test, p, extra)
    return -val if reversed else val


def touching_report(u, test, p: GaugePoint, probes: Sequence[GaugePoint], kind: str = "sub") -> dict:
    """Check that u - phi has a one-sided max (sub) or min (super) at p over the probes.

    Returns {"gap_at_p", "worst_violation", "worst_index", "touching"}; a violation
    is how far a probe exceeds (sub) or undercuts (super) the value at p.
    """
    if kind not in ("sub", "super"):
        raise DomainError("kind must be 'sub' or 'super'")
    if any(q.t < p.t for q in probes):
        raise DomainError("probes must not precede the touching time")
    sign = 1.0 if kind == "sub" else -1.0
    base = float(u(p.t, p.path)) - float(test(p.t, p.path))
    worst, idx = 0.0, -1
    for i, q in enumerate(probes):
        diff = float(u(q.t, q.path)) - float(test(q.t, q.path))
        v = sign * (diff - base)
        if v > worst:
            worst, idx = v, i
    return {"gap_at_p": base, "worst_violation": worst, "worst_index": idx, "touching": worst <= 0.0}


def _epsilon_term(solution: GridSolution, t: float, y) -> float:
    _, _, H = solution.partials(t, y)
    return 0.5 * solution.epsilon**2 * float(np.trace(H))


def classical_residual(
    solution: GridSolution,
    problem: LiftedProblem,
    samples: Sequence[GaugePoint],
    control_problem: ControlProblem | None = None,
) -> dict:
    """Pointwise residual of the epsilon-regularized path HJB equation for v_eps.

    The residual at (t, x) is -d^H v + F(t, x, v, d^V v, d^VV v) - eps^2 tr[d_yy v_bar] / 2
    with pathwise derivatives from the cylindrical structure of v_eps.

    Returns {"max": float, "residuals": list, "samples": list of (t, y)}.
    """
    cp = control_problem or problem.to_control_problem()
    v = solution.functional()
    res, pts = [], []
    for p in samples:
        y = v.lift(p.path, p.t)
        u = solution(p.t, y)
        r = subsolution_lhs(cp, u, v, p, extra=_epsilon_term(solution, p.t, y))
        res.append(r)
        pts.append((p.t, y))
    return {"max": float(np.max(np.abs(res))) if res else 0.0, "residuals": res, "samples": pts}


def scheme_tolerance(solution: GridSolution, problem: LiftedProblem, p: GaugePoint, safety: float = 2.0) -> float:
    """Truncation-error estimate of the lifted scheme at p.

    Per axis, an upwinded drift adds h |b_i| |d_ii v| / 2 and a central one
    h^2 |b_i| |d_iii v| / 6; diffusion adds h^2 A_ii |d_iiii v| / 24 and the
    explicit time step dt |d_tt v| / 2. Axis derivatives beyond the Hessian
    come from grid differences. ``safety`` scales the sum.
    """
    v = solution.functional()
    y = np.asarray(v.lift(p.path, p.t), dtype=float)
    _, _, H = solution.partials(p.t, y)
    h = solution.h
    D = y.size
    Y = y[None, :]
    est = 0.0
    for i in range(D):
        e = np.zeros(D)
        e[i] = h[i]
        f = [solution(p.t, y + k * e) for k in (-2, -1, 0, 1, 2)]
        d3 = (f[4] - 2 * f[3] + 2 * f[1] - f[0]) / (2 * h[i] ** 3)
        d4 = (f[4] - 4 * f[3] + 6 * f[2] - 4 * f[1] + f[0]) / h[i] ** 4
        worst = 0.0
        for a in problem.actions:
            b = problem.b_phi(p.t, Y, a)[0]
            s = problem.sigma_phi(p.t, Y, a)[0]
            A = s @ s.T + solution.epsilon**2 * np.eye(D)
            room = A[i, i] - sum(abs(A[i, j]) * h[i] / h[j] for j in range(D) if j != i)
            if abs(b[i]) * h[i] <= room:
                drift = h[i] ** 2 * abs(b[i]) * abs(d3) / 6
            else:
                drift = 0.5 * h[i] * abs(b[i]) * abs(H[i, i])
            worst = max(worst, drift + h[i] ** 2 * A[i, i] * abs(d4) / 24)
        est += worst
    n = solution._time_bracket(p.t)
    times = solution.times
    n = min(max(n, 1), times.size - 2)
    dt = times[1] - times[0]
    utt = (solution(times[n + 1], y) - 2 * solution(times[n], y) + solution(times[n - 1], y)) / dt**2
    est += 0.5 * dt * abs(utt)
    return safety * est + 1e-10


def residual_csv(report: dict) -> str:
    buf = io.StringIO()
    D = len(report["samples"][0][1]) if report["samples"] else 1
    buf.write("t," + ",".join(f"y{i + 1}" for i in range(D)) + ",residual\n")
    for (t, y), r in zip(report["samples"], report["residuals"]):
        buf.write(",".join([repr(float(t))] + [repr(float(c)) for c in np.ravel(y)] + [repr(float(r))]) + "\n")
    return buf.getvalue()
