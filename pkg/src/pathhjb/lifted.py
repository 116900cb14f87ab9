"""Finite-dimensional HJB equation in lifted coordinates, solved on a grid."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import lambertw

from .coefficients import CylindricalCoefficient
from .control import ControlProblem
from .forward import lifted_coordinates
from .functional import CylindricalFunctional, stacking_matrix
from .paths import DomainError, GaugePoint
from .sde import ControlledSDE

__all__ = [
    "LiftedProblem",
    "GridConfig",
    "GridSolution",
    "Reconstruction",
    "build_lifted",
    "solve",
    "reconstruct",
    "verify_bounds",
    "fit_growth_constant",
    "MAX_GRID_DIM",
]

MAX_GRID_DIM = 3
DEFAULT_SPACE_NODES = {1: 401, 2: 81, 3: 31}


@dataclass(frozen=True)
class LiftedProblem:
    """Coefficients of a control problem written in lifted coordinates y in R^{d m}.

    The cores are vectorized over leading axes of y: b gives (..., d), sigma
    (..., d, m_noise), f (...,) and g (...,).
    """

    b: CylindricalCoefficient
    sigma: CylindricalCoefficient
    f: CylindricalCoefficient
    g: CylindricalCoefficient
    actions: tuple
    T: float = 1.0
    name: str = "lifted"

    @property
    def weights(self) -> tuple:
        return self.b.weights

    @property
    def d(self) -> int:
        return self.b.d

    @property
    def dim(self) -> int:
        return self.b.dim

    @property
    def m_noise(self) -> int:
        return int(self.sigma.out_shape[-1]) if self.sigma.out_shape else 1

    def phi(self, t: float) -> np.ndarray:
        return stacking_matrix(self.weights, t, self.d)

    def b_phi(self, t: float, Y: np.ndarray, a) -> np.ndarray:
        bb = np.asarray(self.b.core(t, Y, a), dtype=float)
        bb = np.broadcast_to(bb, Y.shape[:-1] + (self.d,))
        return np.einsum("Dk,...k->...D", self.phi(t), bb)

    def sigma_phi(self, t: float, Y: np.ndarray, a) -> np.ndarray:
        s = np.asarray(self.sigma.core(t, Y, a), dtype=float)
        s = np.broadcast_to(s, Y.shape[:-1] + (self.d, self.m_noise))
        return np.einsum("Dk,...km->...Dm", self.phi(t), s)

    def running(self, t: float, Y: np.ndarray, a) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.f.core(t, Y, a), dtype=float), Y.shape[:-1])

    def terminal(self, Y: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.g.core(self.T, Y, None), dtype=float), Y.shape[:-1])

    def to_control_problem(self) -> ControlProblem:
        sde = ControlledSDE(self.b, self.sigma, self.actions, self.d, self.m_noise, self.T)
        return ControlProblem(sde, self.f.as_spec(), self.g.as_spec(), self.name)

    def phi_norm(self, probes: int = 65) -> float:
        return max(np.linalg.norm(self.phi(t), 2) for t in np.linspace(0.0, self.T, probes))

    def reachable_radius(self, y0=None) -> float:
        """|y0| + (||b_phi|| + 3 ||sigma_phi|| sqrt(T)) T from the declared bounds."""
        if self.b.bound is None or self.sigma.bound is None:
            raise DomainError("drift and diffusion need declared bounds to size the grid")
        y0n = 0.0 if y0 is None else float(np.max(np.abs(np.atleast_1d(y0))))
        pn = self.phi_norm()
        return y0n + (self.b.bound * pn + 3.0 * self.sigma.bound * pn * math.sqrt(self.T)) * self.T


def build_lifted(b, sigma, f, g, actions: Sequence, T: float = 1.0, name: str = "lifted") -> LiftedProblem:
    """Assemble a LiftedProblem from four cylindrical coefficients on one weight list."""
    coeffs = (b, sigma, f, g)
    if not all(isinstance(c, CylindricalCoefficient) for c in coeffs):
        raise DomainError("all coefficients must be cylindrical")
    w0 = b.weights
    for c in coeffs[1:]:
        if len(c.weights) != len(w0) or any(x is not y and x != y for x, y in zip(c.weights, w0)):
            raise DomainError(f"coefficient '{c.name}' uses a different weight list")
        if c.d != b.d:
            raise DomainError("coefficients disagree on the path dimension")
    return LiftedProblem(b, sigma, f, g, tuple(actions), float(T), name)


@dataclass(frozen=True)
class GridConfig:
    """Grid for the lifted solve.

    Parameters
    ----------
    time_nodes : int
        Output time nodes on [0, T]; the solver sub-steps between them as CFL requires.
    space_nodes : int, optional
        Nodes per lifted coordinate; defaults depend on the dimension.
    half_width : float, optional
        Half-width of the cube [-w, w]^D; default from the reachable radius.
    margin : float
        Relative margin added to the reachable radius.
    y0 : array, optional
        Start point whose reachable set the grid must cover.
    """

    time_nodes: int = 201
    space_nodes: int | None = None
    half_width: float | None = None
    margin: float = 0.25
    y0: tuple | None = None

    def nodes(self, D: int) -> int:
        return self.space_nodes or DEFAULT_SPACE_NODES[D]


def _shift(padded: np.ndarray, offset: Sequence[int]) -> np.ndarray:
    sl = tuple(slice(1 + o, padded.shape[k] - 1 + o) for k, o in enumerate(offset))
    return padded[sl]


def _unit(D: int, i: int, s: int = 1) -> list:
    e = [0] * D
    e[i] = s
    return e


class GridSolution:
    """Nodal values of the lifted value function on [0, T] x [-w, w]^D."""

    def __init__(self, times, axes, values, epsilon, problem: LiftedProblem, report: dict):
        self.times = np.asarray(times, dtype=float)
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.values = np.asarray(values, dtype=float)
        self.epsilon = float(epsilon)
        self.problem = problem
        self.report = report
        self._interp = RegularGridInterpolator(
            (self.times, *self.axes), self.values, bounds_error=False, fill_value=None
        )

    @property
    def D(self) -> int:
        return len(self.axes)

    @property
    def h(self) -> np.ndarray:
        return np.array([a[1] - a[0] for a in self.axes])

    def inside(self, y) -> bool:
        y = np.asarray(y, dtype=float).reshape(-1)
        return all(a[0] - 1e-12 <= v <= a[-1] + 1e-12 for a, v in zip(self.axes, y))

    def __call__(self, t, y) -> float:
        y = np.asarray(y, dtype=float).reshape(-1)
        return float(self._interp(np.concatenate([[t], y])[None, :])[0])

    def _time_bracket(self, t: float) -> int:
        return int(min(max(np.searchsorted(self.times, t, side="right") - 1, 0), self.times.size - 2))

    def partials(self, t: float, y) -> tuple[float, np.ndarray, np.ndarray]:
        """Grid-step differences of the interpolant: forward in t, central in y."""
        y = np.asarray(y, dtype=float).reshape(-1)
        n = self._time_bracket(t)
        dt = (self(self.times[n + 1], y) - self(self.times[n], y)) / (self.times[n + 1] - self.times[n])
        h = self.h
        D = self.D
        E = np.eye(D) * h
        u0 = self(t, y)
        grad = np.array([(self(t, y + E[i]) - self(t, y - E[i])) / (2 * h[i]) for i in range(D)])
        H = np.empty((D, D))
        for i in range(D):
            H[i, i] = (self(t, y + E[i]) - 2 * u0 + self(t, y - E[i])) / h[i] ** 2
            for j in range(i):
                H[i, j] = H[j, i] = (
                    self(t, y + E[i] + E[j]) - self(t, y + E[i] - E[j])
                    - self(t, y - E[i] + E[j]) + self(t, y - E[i] - E[j])
                ) / (4 * h[i] * h[j])
        return float(dt), grad, H

    def functional(self) -> CylindricalFunctional:
        """v(t, x) = v_bar(t, y^{t,x}) with grid-difference partials."""
        p = self.problem
        return CylindricalFunctional(
            core=lambda t, y: self(t, y),
            weights=p.weights,
            d=p.d,
            core_dt=lambda t, y: self.partials(t, y)[0],
            core_dy=lambda t, y: self.partials(t, y)[1],
            core_dyy=lambda t, y: self.partials(t, y)[2],
            name=f"v_eps[{p.name}]",
        )

    def nodal_gradient(self, k: int) -> np.ndarray:
        """Central first differences at interior nodes of time slice k, shape (D, ...)."""
        u = self.values[k]
        out = []
        for i, h in enumerate(self.h):
            sl_p = [slice(1, -1)] * self.D
            sl_m = [slice(1, -1)] * self.D
            sl_p[i], sl_m[i] = slice(2, None), slice(None, -2)
            out.append((u[tuple(sl_p)] - u[tuple(sl_m)]) / (2 * h))
        return np.array(out)

    def second_differences(self, k: int) -> np.ndarray:
        """Central second differences along each axis at interior nodes, shape (D, ...)."""
        u = self.values[k]
        c = u[(slice(1, -1),) * self.D]
        out = []
        for i, h in enumerate(self.h):
            sl_p = [slice(1, -1)] * self.D
            sl_m = [slice(1, -1)] * self.D
            sl_p[i], sl_m[i] = slice(2, None), slice(None, -2)
            out.append((u[tuple(sl_p)] - 2 * c + u[tuple(sl_m)]) / h**2)
        return np.array(out)

    def interior_mesh(self) -> np.ndarray:
        grids = np.meshgrid(*[a[1:-1] for a in self.axes], indexing="ij")
        return np.stack(grids, axis=-1)

    def to_csv(self, time_stride: int = 1) -> str:
        buf = io.StringIO()
        buf.write("t," + ",".join(f"y{i + 1}" for i in range(self.D)) + ",value\n")
        mesh = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, self.D)
        for k in range(0, self.times.size, time_stride):
            vals = self.values[k].reshape(-1)
            for y, v in zip(mesh, vals):
                buf.write(",".join([repr(float(self.times[k]))] + [repr(float(c)) for c in y] + [repr(float(v))]) + "\n")
        return buf.getvalue()

    def diagnostics(self) -> dict:
        return dict(self.report, epsilon=self.epsilon, space_nodes=[a.size for a in self.axes],
                    time_nodes=int(self.times.size))


def _coefficients(problem: LiftedProblem, t: float, Y: np.ndarray, eps: float):
    """Per action: drift (D, ...), diffusion matrix A = eps^2 I + sigma sigma^T (D, D, ...), running cost."""
    out = []
    D = Y.shape[-1]
    for a in problem.actions:
        b = np.moveaxis(problem.b_phi(t, Y, a), -1, 0)
        s = problem.sigma_phi(t, Y, a)
        A = np.einsum("...im,...jm->...ij", s, s) + eps**2 * np.eye(D)
        A = np.moveaxis(np.moveaxis(A, -1, 0), -1, 0)
        out.append((b, A, problem.running(t, Y, a)))
    return out


def _rate(coefs, h: np.ndarray) -> tuple[float, bool]:
    """Largest diagonal rate of the scheme and whether cross terms keep it monotone."""
    D = h.size
    worst, monotone = 0.0, True
    for b, A, _ in coefs:
        r = sum(np.abs(b[i]) / h[i] + A[i, i] / h[i] ** 2 for i in range(D))
        for i in range(D):
            off = sum(np.abs(A[i, j]) / (h[i] * h[j]) for j in range(D) if j != i)
            if np.any(A[i, i] / h[i] ** 2 - off < -1e-12):
                monotone = False
            for j in range(i + 1, D):
                r = r - np.abs(A[i, j]) / (h[i] * h[j])
        worst = max(worst, float(np.max(r)))
    return worst, monotone


def _central_ok(b, A, h: np.ndarray, i: int):
    """Cells where a central drift difference keeps the axis-i neighbour weights nonnegative."""
    D = h.size
    room = A[i, i] - sum(np.abs(A[i, j]) * h[i] / h[j] for j in range(D) if j != i)
    return np.abs(b[i]) * h[i] <= room


def _apply(u: np.ndarray, coefs, h: np.ndarray) -> np.ndarray:
    """max over actions of the monotone drift-diffusion operator plus running cost.

    The drift is differenced centrally where diffusion dominates the cell and
    upwind elsewhere, so numerical diffusion only appears where it is needed.
    """
    D = u.ndim
    up = np.pad(u, 1, mode="reflect", reflect_type="odd")
    plus = [_shift(up, _unit(D, i, 1)) for i in range(D)]
    minus = [_shift(up, _unit(D, i, -1)) for i in range(D)]
    best = None
    for b, A, f in coefs:
        acc = np.array(f, dtype=float, copy=True)
        for i in range(D):
            fwd = (plus[i] - u) / h[i]
            bwd = (u - minus[i]) / h[i]
            upwind = np.maximum(b[i], 0.0) * fwd - np.maximum(-b[i], 0.0) * bwd
            acc += np.where(_central_ok(b, A, h, i), b[i] * 0.5 * (fwd + bwd), upwind)
            acc += 0.5 * A[i, i] * (plus[i] - 2 * u + minus[i]) / h[i] ** 2
        for i in range(D):
            for j in range(i + 1, D):
                Aij = A[i, j]
                if not np.any(Aij):
                    continue
                base = 2 * u - plus[i] - minus[i] - plus[j] - minus[j]
                pp = _shift(up, [1 if k in (i, j) else 0 for k in range(D)])
                mm = _shift(up, [-1 if k in (i, j) else 0 for k in range(D)])
                pm = _shift(up, [1 if k == i else (-1 if k == j else 0) for k in range(D)])
                mp = _shift(up, [-1 if k == i else (1 if k == j else 0) for k in range(D)])
                pos = (base + pp + mm) / (2 * h[i] * h[j])
                neg = -(base + pm + mp) / (2 * h[i] * h[j])
                acc += np.where(Aij >= 0, Aij * pos, Aij * neg)
        best = acc if best is None else np.maximum(best, acc)
    return best


def solve(problem: LiftedProblem, epsilon: float, grid: GridConfig | None = None) -> GridSolution:
    """Backward explicit monotone solve of the epsilon-regularized lifted HJB equation.

    Between output times the step is cut to the CFL limit; the report records
    the limit, the sub-step counts and whether the stencil stayed monotone.
    """
    grid = grid or GridConfig()
    if not (0.0 < epsilon < 1.0):
        raise DomainError("epsilon must lie in (0, 1)")
    D = problem.dim
    if D > MAX_GRID_DIM:
        raise DomainError(f"lifted dimension {D} exceeds the grid cap {MAX_GRID_DIM}; use Monte Carlo instead")
    if grid.half_width is not None:
        w = float(grid.half_width)
    else:
        w = problem.reachable_radius(grid.y0) * (1.0 + grid.margin)
    if not (w > 0):
        raise DomainError("grid half-width must be positive")
    N = grid.nodes(D)
    axis = np.linspace(-w, w, N)
    axes = [axis] * D
    h = np.full(D, axis[1] - axis[0])
    Y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    times = np.linspace(0.0, problem.T, grid.time_nodes)
    values = np.empty((times.size,) + (N,) * D)
    u = np.array(problem.terminal(Y), dtype=float)
    values[-1] = u
    substeps, min_dt, monotone = [], np.inf, True
    for k in range(times.size - 1, 0, -1):
        t_hi, t_lo = times[k], times[k - 1]
        span = t_hi - t_lo
        coefs = _coefficients(problem, t_hi, Y, epsilon)
        rate, mono = _rate(coefs, h)
        monotone &= mono
        n_sub = max(1, math.ceil(span * rate * (1 - 1e-12)))
        dt = span / n_sub
        s = t_hi
        for j in range(n_sub):
            if j:
                coefs = _coefficients(problem, s, Y, epsilon)
            u = u + dt * _apply(u, coefs, h)
            s -= dt
        values[k - 1] = u
        substeps.append(n_sub)
        min_dt = min(min_dt, dt)
    report = {
        "half_width": float(w),
        "h": float(h[0]),
        "min_dt": float(min_dt),
        "substeps_total": int(sum(substeps)),
        "substeps_max": int(max(substeps)) if substeps else 0,
        "cfl_refined": bool(any(s > 1 for s in substeps)),
        "monotone": bool(monotone),
    }
    return GridSolution(times, axes, values, epsilon, problem, report)


@dataclass(frozen=True)
class Reconstruction:
    value: float
    y: np.ndarray = field(repr=False)
    extrapolated: bool = False

    def __float__(self):
        return self.value


def reconstruct(solution: GridSolution, problem: LiftedProblem, p: GaugePoint) -> Reconstruction:
    """v_eps(t, x) = v_bar_eps(t, y^{t,x}) by multilinear interpolation."""
    y = lifted_coordinates(problem.weights, p.path, p.t)
    return Reconstruction(solution(p.t, y), y, not solution.inside(y))


def fit_growth_constant(ratio: float, tau: float) -> float:
    """Smallest C >= 0 with C exp(C tau) >= ratio."""
    if ratio <= 0:
        return 0.0
    if tau <= 0:
        return float(ratio)
    return float(np.real(lambertw(ratio * tau)) / tau)


def verify_bounds(
    solution: GridSolution,
    problem: LiftedProblem,
    epsilon: float | None = None,
    q: float = 1.0,
    reference: Sequence[tuple[GaugePoint, float, float]] | None = None,
) -> dict:
    """Fitted regularity constants of a grid solution.

    Returns a dict with
      semiconcavity_C : smallest C with D^2 v >= -C e^{C(T-t)} (1+|y|)^{3q} at all interior nodes
      min_second_difference : most negative central second difference
      vertical_bound : max over nodes of |phi(t)^T grad_y v_bar|
      eps_constant : fitted C_hat with |v_eps - v_ref| <= eps C_hat e^{C_hat T} (if reference is given)
    """
    eps = solution.epsilon if epsilon is None else float(epsilon)
    T = problem.T
    mesh = solution.interior_mesh()
    growth = (1.0 + np.linalg.norm(mesh, axis=-1)) ** (3 * q)
    C, min_d2, L = 0.0, np.inf, 0.0
    for k, t in enumerate(solution.times):
        d2 = solution.second_differences(k).min(axis=0)
        min_d2 = min(min_d2, float(d2.min()))
        need = float(np.max(-d2 / growth))
        C = max(C, fit_growth_constant(need, T - t))
        grad = solution.nodal_gradient(k)
        V1 = np.einsum("Dd,D...->d...", problem.phi(t), grad)
        L = max(L, float(np.max(np.linalg.norm(V1, axis=0))))
    out = {"semiconcavity_C": C, "min_second_difference": min_d2, "vertical_bound": L, "q": q}
    if reference:
        errs = []
        for p, v_ref, se in reference:
            errs.append(abs(reconstruct(solution, problem, p).value - v_ref))
        worst = max(errs)
        out["reference_errors"] = errs
        out["eps_constant"] = fit_growth_constant(worst / eps, T)
    return out
