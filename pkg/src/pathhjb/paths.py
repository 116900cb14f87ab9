"""Piecewise-linear paths on [0, T] with sup norms, stopping and the path pseudometric."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "TimeGrid",
    "Path",
    "GaugePoint",
    "sup_norm",
    "seminorm_t",
    "d_infinity",
    "stop",
    "polygonal_from_nodes",
    "dyadic_times",
    "oscillation",
    "merge_times",
]

# Times closer than this (relative to T) are treated as one grid node.
_TIME_ATOL = 1e-13


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time nodes from 0 to T."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        if times.size < 2:
            raise DomainError("a time grid needs at least 2 nodes")
        if times[0] != 0.0:
            raise DomainError(f"a time grid starts at 0, got {times[0]}")
        if not np.all(np.diff(times) > 0):
            raise DomainError("time grid must be strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return self.times.size

    @classmethod
    def uniform(cls, T: float, n_steps: int) -> "TimeGrid":
        return cls(np.linspace(0.0, T, n_steps + 1))

    @classmethod
    def dyadic(cls, n: int, T: float = 1.0) -> "TimeGrid":
        return cls(dyadic_times(n, T))


def dyadic_times(n: int, T: float = 1.0) -> np.ndarray:
    """Nodes t_j = j T / 2^n for j = 0..2^n."""
    if n < 0:
        raise DomainError("dyadic level must be nonnegative")
    return np.arange(2**n + 1, dtype=float) * (T / 2**n)


def merge_times(*arrays: np.ndarray, T: float | None = None) -> np.ndarray:
    """Sorted union of time arrays with near-duplicates collapsed."""
    t = np.unique(np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays]))
    if T is None:
        T = float(t[-1]) if t.size else 1.0
    tol = _TIME_ATOL * max(T, 1.0)
    if t.size > 1:
        keep = np.concatenate([[True], np.diff(t) > tol])
        t = t[keep]
    return t


def _interp(times: np.ndarray, values: np.ndarray, s) -> np.ndarray:
    """Linear interpolation of (n, d) values at times s, clamped to the grid span."""
    s = np.asarray(s, dtype=float)
    flat = s.ravel()
    out = np.empty((flat.size, values.shape[1]))
    for k in range(values.shape[1]):
        out[:, k] = np.interp(flat, times, values[:, k])
    return out.reshape(s.shape + (values.shape[1],))


@dataclass(frozen=True)
class Path:
    """Continuous path in R^d, linear between grid nodes.

    Parameters
    ----------
    grid : TimeGrid
        Nodes 0 = s_0 < ... < s_{n-1} = T.
    values : ndarray, shape (n, d)
        Path values at the nodes. A 1-d array is read as d = 1.
    """

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        grid = self.grid if isinstance(self.grid, TimeGrid) else TimeGrid(self.grid)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != len(grid):
            raise DomainError(
                f"values shape {values.shape} does not match grid of length {len(grid)}"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("path values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def T(self) -> float:
        return self.grid.T

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def __call__(self, s) -> np.ndarray:
        """Path value(s) at time(s) s; shape s.shape + (d,)."""
        return _interp(self.times, self.values, s)

    def resample(self, times: np.ndarray) -> "Path":
        """Same path on a grid containing ``times`` (which must span [0, T])."""
        times = merge_times(times, T=self.T)
        return Path(TimeGrid(times), self(times))

    def refine(self, extra: Sequence[float]) -> "Path":
        """Insert extra nodes without changing the path."""
        extra = np.asarray(extra, dtype=float).ravel()
        extra = extra[(extra > 0) & (extra < self.T)]
        if extra.size == 0:
            return self
        return self.resample(np.concatenate([self.times, extra]))

    def _binary(self, other, op) -> "Path":
        if isinstance(other, Path):
            if other.T != self.T:
                raise DomainError("paths live on different horizons")
            times = merge_times(self.times, other.times, T=self.T)
            return Path(TimeGrid(times), op(self(times), other(times)))
        return Path(self.grid, op(self.values, np.asarray(other, dtype=float)))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, c):
        return Path(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return Path(self.grid, -self.values)

    @classmethod
    def from_function(cls, f: Callable, T: float = 1.0, n_steps: int = 256, d: int = 1) -> "Path":
        """Sample ``f(s)`` on a uniform grid; f returns scalars or length-d vectors."""
        times = np.linspace(0.0, T, n_steps + 1)
        vals = np.array([np.broadcast_to(np.asarray(f(s), dtype=float), (d,)) for s in times])
        return cls(TimeGrid(times), vals)

    @classmethod
    def constant(cls, value, T: float = 1.0) -> "Path":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(TimeGrid(np.array([0.0, T])), np.vstack([v, v]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s"] + [f"x{i + 1}" for i in range(self.d)])
        for s, row in zip(self.times, self.values):
            w.writerow([repr(float(s))] + [repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Path":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[0] != "s" or any(h != f"x{i + 1}" for i, h in enumerate(header[1:])):
            raise DomainError(f"unexpected path CSV header {header}")
        data = np.array(body, dtype=float)
        return cls(TimeGrid(data[:, 0]), data[:, 1:])


@dataclass(frozen=True)
class GaugePoint:
    """A time together with a path, the argument of the gauge functions."""

    t: float
    path: Path

    def __post_init__(self):
        t = float(self.t)
        if not (0.0 <= t <= self.path.T):
            raise DomainError(f"t={t} outside [0, {self.path.T}]")
        object.__setattr__(self, "t", t)


def _check_time(path: Path, t: float) -> float:
    t = float(t)
    if not (0.0 <= t <= path.T):
        raise DomainError(f"t={t} outside [0, {path.T}]")
    return t


def sup_norm(path: Path) -> float:
    """Sup of |x(s)| over [0, T].

    |x(s)|^2 is a convex quadratic on each linear segment, so its maximum sits at
    a segment endpoint and the node maximum is exact.
    """
    return float(np.sqrt(np.max(np.einsum("ij,ij->i", path.values, path.values))))


def stop(path: Path, t: float) -> Path:
    """The stopped path x(. ^ t); t becomes a grid node."""
    t = _check_time(path, t)
    if t == path.T:
        return path
    times = path.times
    keep = times[times < t]
    if keep.size == 0:
        return Path(TimeGrid(np.array([0.0, path.T])), np.vstack([path.values[0]] * 2))
    xt = path(t)
    new_t = np.concatenate([keep, [t, path.T]])
    new_v = np.vstack([path.values[: keep.size], xt, xt])
    if t - keep[-1] <= _TIME_ATOL * max(path.T, 1.0):
        # t coincides with an existing node
        new_t = np.concatenate([keep, [path.T]])
        new_v = np.vstack([path.values[: keep.size], path.values[keep.size - 1]])
    return Path(TimeGrid(new_t), new_v)


def seminorm_t(path: Path, t: float) -> float:
    """||x||_t = sup_{s <= t} |x(s)|."""
    return sup_norm(stop(path, t))


def d_infinity(a: GaugePoint, b: GaugePoint) -> float:
    """|t - t'| + ||x(. ^ t) - x'(. ^ t')||_T."""
    return abs(a.t - b.t) + stopped_distance(a, b)


def stopped_distance(a: GaugePoint, b: GaugePoint) -> float:
    """||x(. ^ t) - x'(. ^ t')||_T on the merged grid."""
    return sup_norm(stop(a.path, a.t) - stop(b.path, b.t))


def polygonal_from_nodes(n: int, y, T: float = 1.0) -> Path:
    """Polygonal path through y_j at the dyadic nodes j T / 2^n.

    ``y`` has shape (2^n + 1, d), or is flat of length 2^n + 1 for d = 1.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != 2**n + 1:
        raise DomainError(f"level {n} needs {2**n + 1} nodes, got {y.shape[0]}")
    return Path(TimeGrid(dyadic_times(n, T)), y)


def oscillation(path: Path, t: float, delta: float) -> float:
    """sup over |r - s| <= delta of |x(r ^ t) - x(s ^ t)|.

    On a cell (segment i) x (segment j) intersected with the band |r - s| <= delta
    the difference is affine, so the sup sits at a vertex: a node pair, or a node
    paired with the point at distance delta from it.
    """
    if delta <= 0:
        raise DomainError("delta must be positive")
    xs = stop(path, t)
    times, vals = xs.times, xs.values
    best = 0.0
    # node paired with node +- delta
    for shift in (delta, -delta):
        s = times + shift
        ok = (s >= 0.0) & (s <= xs.T)
        if np.any(ok):
            diff = xs(s[ok]) - vals[ok]
            best = max(best, float(np.sqrt(np.max(np.einsum("ij,ij->i", diff, diff)))))
    # node pairs within delta
    n = times.size
    lag = 1
    while lag < n:
        gap = times[lag:] - times[:-lag]
        ok = gap <= delta * (1 + 1e-12)
        if not np.any(ok):
            break
        diff = vals[lag:][ok] - vals[:-lag][ok]
        best = max(best, float(np.sqrt(np.max(np.einsum("ij,ij->i", diff, diff)))))
        lag += 1
    return best
