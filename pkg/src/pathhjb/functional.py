"""Pathwise (horizontal / vertical) derivatives and the functional Ito residual."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .forward import Weight, lifted_along, lifted_coordinates
from .paths import DomainError, GaugePoint, Path, TimeGrid, merge_times, stop

__all__ = [
    "PathFunctional",
    "CylindricalFunctional",
    "stacking_matrix",
    "bump",
    "horizontal_derivative",
    "vertical_derivative",
    "cylindrical_derivatives",
    "ito_residual",
    "check_non_anticipative",
]

# Width of the left ramp that stands in for the jump of x + v 1_{[t,T]}.
BUMP_RAMP = 1e-10


@dataclass(frozen=True)
class PathFunctional:
    """A map (t, x) -> u(t, x) that should only see x(. ^ t)."""

    func: Callable[[float, Path], float]
    name: str = "u"
    non_anticipative: bool = True

    def __call__(self, t: float, path: Path) -> float:
        return float(self.func(t, path))


def stacking_matrix(weights: Sequence[Weight], t: float, d: int) -> np.ndarray:
    """The (d m) x d matrix stacking phi_j(t) I_d blocks."""
    vals = np.array([float(w(np.array([t]))[0]) for w in weights])
    return np.kron(vals[:, None], np.eye(d))


def _fd_partials(core, t, y, h=1e-5):
    y = np.asarray(y, dtype=float)
    D = y.size
    dt = (core(t + h, y) - core(t - h, y)) / (2 * h)
    eye = np.eye(D) * h
    dy = np.array([(core(t, y + e) - core(t, y - e)) / (2 * h) for e in eye])
    f0 = core(t, y)
    H = np.empty((D, D))
    for i in range(D):
        H[i, i] = (core(t, y + eye[i]) - 2 * f0 + core(t, y - eye[i])) / h**2
        for j in range(i):
            v = (
                core(t, y + eye[i] + eye[j])
                - core(t, y + eye[i] - eye[j])
                - core(t, y - eye[i] + eye[j])
                + core(t, y - eye[i] - eye[j])
            ) / (4 * h**2)
            H[i, j] = H[j, i] = v
    return float(dt), dy, H


@dataclass(frozen=True)
class CylindricalFunctional:
    """u(t, x) = core(t, y^{t,x}) with y the lifted coordinates of ``weights``.

    Parameters
    ----------
    core : callable
        (t, y) -> float with y of length d * len(weights).
    weights : sequence of Weight
    d : int
        Path dimension.
    core_dt, core_dy, core_dyy : callable, optional
        Analytic partials of the core; central differences are used when absent.
    """

    core: Callable[[float, np.ndarray], float]
    weights: tuple
    d: int = 1
    core_dt: Callable | None = None
    core_dy: Callable | None = None
    core_dyy: Callable | None = None
    name: str = "cylindrical"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))

    @property
    def dim(self) -> int:
        return self.d * len(self.weights)

    def lift(self, path: Path, t: float) -> np.ndarray:
        return lifted_coordinates(self.weights, path, t)

    def __call__(self, t: float, path: Path) -> float:
        return float(self.core(t, self.lift(path, t)))

    def as_path_functional(self) -> PathFunctional:
        return PathFunctional(self.__call__, self.name)

    def partials(self, t: float, y) -> tuple[float, np.ndarray, np.ndarray]:
        """(d_t core, grad_y core, Hessian_y core) at (t, y)."""
        y = np.asarray(y, dtype=float)
        if self.core_dt is None or self.core_dy is None or self.core_dyy is None:
            fd = _fd_partials(self.core, t, y)
        dt = float(self.core_dt(t, y)) if self.core_dt is not None else fd[0]
        dy = np.asarray(self.core_dy(t, y), dtype=float).reshape(-1) if self.core_dy is not None else fd[1]
        dyy = (
            np.asarray(self.core_dyy(t, y), dtype=float).reshape(y.size, y.size)
            if self.core_dyy is not None
            else fd[2]
        )
        return dt, dy, dyy

    def check_partials(self, samples: Sequence[tuple[float, np.ndarray]], h: float = 1e-4) -> float:
        """Max relative deviation of supplied partials from finite differences."""
        worst = 0.0
        for t, y in samples:
            an = self.partials(t, y)
            fd = _fd_partials(self.core, t, np.asarray(y, dtype=float), h)
            for a, b in zip(an, fd):
                a, b = np.atleast_1d(a), np.atleast_1d(b)
                err = np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b))))
                worst = max(worst, float(err))
        return worst


def bump(path: Path, t: float, v) -> Path:
    """x + v 1_{[t,T]}.

    The node at t carries the shifted value. Continuity of the representation is
    kept by a ramp of width BUMP_RAMP * T just before t, which holds the
    unshifted value at its left end.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != path.d:
        raise DomainError("bump direction has the wrong dimension")
    if not (0.0 <= t <= path.T):
        raise DomainError(f"t={t} outside [0, {path.T}]")
    extra = [t]
    before = path.times[path.times < t]
    pre = t - BUMP_RAMP * path.T
    if t > 0 and before.size and before[-1] < pre:
        extra.append(pre)
    times = merge_times(path.times, extra, T=path.T)
    vals = path(times)
    vals[times >= t] += v
    return Path(TimeGrid(times), vals)


def horizontal_derivative(u, p: GaugePoint, delta: float | None = None, return_step: bool = False):
    """(u(t + delta, x(. ^ t)) - u(t, x(. ^ t))) / delta.

    A step running past T is clamped; at t = T the left-limit quotient
    (u(T, x(. ^ (T - delta))) - u(T - delta, x(. ^ (T - delta)))) / delta is used.
    """
    T = p.path.T
    if delta is None:
        delta = 1e-5 * T
    if delta <= 0:
        raise DomainError("delta must be positive")
    t = p.t
    if t >= T:
        s = T - delta
        xs = stop(p.path, s)
        val = (u(T, xs) - u(s, xs)) / delta
    else:
        step = min(delta, T - t)
        xs = stop(p.path, t)
        val = (u(t + step, xs) - u(t, xs)) / step
        delta = step
    return (float(val), float(delta)) if return_step else float(val)


def vertical_derivative(u, p: GaugePoint, order: int = 1, h: float = 1e-4) -> np.ndarray:
    """Central-difference vertical gradient (order 1) or Hessian (order 2)."""
    if h <= 0:
        raise DomainError("h must be positive")
    d, t, x = p.path.d, p.t, p.path
    E = np.eye(d) * h

    def ub(v):
        return u(t, bump(x, t, v))

    if order == 1:
        return np.array([(ub(E[i]) - ub(-E[i])) / (2 * h) for i in range(d)])
    if order != 2:
        raise DomainError("order must be 1 or 2")
    f0 = u(t, x)
    H = np.empty((d, d))
    for i in range(d):
        H[i, i] = (ub(E[i]) - 2 * f0 + ub(-E[i])) / h**2
        for j in range(i):
            H[i, j] = H[j, i] = (
                ub(E[i] + E[j]) - ub(E[i] - E[j]) - ub(-E[i] + E[j]) + ub(-E[i] - E[j])
            ) / (4 * h**2)
    return H


def cylindrical_derivatives(u: CylindricalFunctional, p: GaugePoint):
    """Analytic (horizontal, vertical gradient, vertical Hessian) of a cylindrical functional."""
    y = u.lift(p.path, p.t)
    dt, dy, dyy = u.partials(p.t, y)
    Phi = stacking_matrix(u.weights, p.t, u.d)
    return dt, Phi.T @ dy, Phi.T @ dyy @ Phi


def ito_residual(u: CylindricalFunctional, path: Path, qv_increments, t0: float = 0.0) -> float:
    """|u(T, X) - u(t0, X) - (left-point sums of the three Ito integrals)|.

    Parameters
    ----------
    path : Path
        The discrete semimartingale; its grid nodes are the time steps.
    qv_increments : array, shape (n_steps, d, d)
        Quadratic-variation increment of each grid step (all steps from 0).
    t0 : float
        Starting time, a grid node.
    """
    times = path.times
    qv = np.asarray(qv_increments, dtype=float).reshape(times.size - 1, path.d, path.d)
    k0 = int(np.argmin(np.abs(times - t0)))
    if abs(times[k0] - t0) > 1e-12 * path.T:
        raise DomainError("t0 must be a grid node")
    ts = times[k0:]
    Y = lifted_along(u.weights, path, ts).reshape(ts.size, -1)
    X = path.values[k0:]
    rhs = 0.0
    for k in range(ts.size - 1):
        dt, dy, dyy = u.partials(ts[k], Y[k])
        Phi = stacking_matrix(u.weights, ts[k], u.d)
        v1 = Phi.T @ dy
        v2 = Phi.T @ dyy @ Phi
        rhs += dt * (ts[k + 1] - ts[k]) + 0.5 * np.trace(v2 @ qv[k0 + k]) + v1 @ (X[k + 1] - X[k])
    lhs = float(u.core(ts[-1], Y[-1])) - float(u.core(ts[0], Y[0]))
    return abs(lhs - rhs)


def check_non_anticipative(u, points: Sequence[GaugePoint], seed: int = 0, scale: float = 1.0) -> float:
    """Max |u(t, x) - u(t, x')| over x' equal to x on [0, t] and perturbed after t."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in points:
        x = p.path
        tail = np.where(x.times > p.t, 1.0, 0.0)[:, None] * rng.normal(scale=scale, size=x.values.shape)
        # keep continuity at t: the perturbation vanishes at and before t
        other = Path(x.grid, x.values + tail).resample(np.concatenate([x.times, [p.t]]))
        other = Path(other.grid, np.where((other.times <= p.t)[:, None], x(other.times), other.values))
        worst = max(worst, abs(u(p.t, x) - u(p.t, other)))
    return worst
