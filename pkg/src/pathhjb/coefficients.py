"""Non-anticipative coefficients with declared regularity constants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .forward import Weight, lifted_along
from .paths import DomainError, GaugePoint, Path, TimeGrid, stop, sup_norm

__all__ = ["CoefficientSpec", "CylindricalCoefficient", "batch_interp", "batch_to_path"]


def batch_interp(times: np.ndarray, values: np.ndarray, t) -> np.ndarray:
    """Values of a batch of grid paths at time(s) t, frozen after the last node.

    ``values`` has shape (B, N, d); ``t`` is a scalar or shape (B,). Returns (B, d).
    """
    B = values.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=float), (B,))
    if times.size == 1:
        return values[:, 0, :].copy()
    tc = np.clip(t, times[0], times[-1])
    idx = np.clip(np.searchsorted(times, tc, side="right") - 1, 0, times.size - 2)
    w = (tc - times[idx]) / (times[idx + 1] - times[idx])
    rows = np.arange(B)
    return values[rows, idx] * (1 - w)[:, None] + values[rows, idx + 1] * w[:, None]


def batch_to_path(times: np.ndarray, values_b: np.ndarray, T: float) -> Path:
    """One grid path, extended constantly to T."""
    if times[-1] < T:
        times = np.append(times, T)
        values_b = np.vstack([values_b, values_b[-1]])
    if times.size == 1:
        times = np.array([0.0, T])
        values_b = np.vstack([values_b, values_b])
    return Path(TimeGrid(times), values_b)


@dataclass(frozen=True)
class CoefficientSpec:
    """A coefficient h(t, x, a) together with its declared constants.

    Parameters
    ----------
    evaluator : callable
        (t, path, a) -> scalar or array; must depend on the path only through x(. ^ t).
    lipschitz_K : float, optional
        Constant K with |h(t,x,a) - h(t,x',a)| <= K ||x - x'||_t.
    bound : float, optional
        Uniform bound on |h|; None means linear growth.
    time_modulus : callable, optional
        delta -> w(delta) bounding |h(t+delta, x(. ^ t), a) - h(t, x(. ^ t), a)|;
        None means w = 0.
    batch : callable, optional
        Vectorized evaluator (t, times, values, a, T) over a batch of paths that
        share a grid and are frozen after times[-1]; values has shape (B, N, d).
    """

    evaluator: Callable[[float, Path, Any], Any]
    lipschitz_K: float | None = None
    bound: float | None = None
    time_modulus: Callable[[float], float] | None = None
    batch: Callable | None = None
    name: str = "h"
    meta: dict = field(default_factory=dict, compare=False)

    def __call__(self, t: float, path: Path, a=None):
        return self.evaluator(t, path, a)

    def w(self, delta) -> np.ndarray:
        delta = np.asarray(delta, dtype=float)
        if self.time_modulus is None:
            return np.zeros_like(delta)
        return np.vectorize(self.time_modulus, otypes=[float])(delta)

    def evaluate_batch(self, t, times, values, a, T: float) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if self.batch is not None:
            return np.asarray(self.batch(t, times, values, a, T), dtype=float)
        tb = np.broadcast_to(np.asarray(t, dtype=float), (values.shape[0],))
        out = [
            np.asarray(self.evaluator(float(tb[b]), batch_to_path(times, values[b], T), a), dtype=float)
            for b in range(values.shape[0])
        ]
        return np.array(out)

    @classmethod
    def markovian(cls, fn: Callable, **kw) -> "CoefficientSpec":
        """Coefficient depending on the path only through x(t).

        ``fn(t, xt, a)`` is vectorized over the leading axis of xt (shape (B, d)).
        """

        def evaluator(t, path, a):
            return np.asarray(fn(t, path(t)[None, :], a))[0]

        def batch(t, times, values, a, T):
            return fn(t, batch_interp(times, values, t), a)

        return cls(evaluator, batch=batch, **kw)

    @classmethod
    def constant(cls, c, **kw) -> "CoefficientSpec":
        c = np.asarray(c, dtype=float)
        kw.setdefault("lipschitz_K", 0.0)
        kw.setdefault("bound", float(np.max(np.abs(c))) if c.size else 0.0)
        return cls(
            lambda t, path, a: c.copy() if c.ndim else float(c),
            batch=lambda t, times, values, a, T: np.broadcast_to(c, (values.shape[0],) + c.shape).copy(),
            **kw,
        )

    def require_declared(self):
        """Reject specs without a finite Lipschitz constant."""
        K = self.lipschitz_K
        if K is None or not np.isfinite(K):
            raise DomainError(f"coefficient '{self.name}' declares no finite Lipschitz constant")
        if self.bound is not None and not np.isfinite(self.bound):
            raise DomainError(f"coefficient '{self.name}' declares an infinite bound")

    def validate(self, points: Sequence[GaugePoint], actions: Sequence = (None,), seed: int = 0) -> dict:
        """Largest observed excess over each declared constant (<= 0 means respected).

        Pairs are formed from consecutive points; the time modulus is probed on
        stopped paths, which is the form the mollification estimates use.
        """
        rng = np.random.default_rng(seed)
        report = {"bound": -np.inf, "lipschitz": -np.inf, "time_modulus": -np.inf, "non_anticipative": 0.0}
        for i, p in enumerate(points):
            q = points[(i + 1) % len(points)]
            for a in actions:
                v = np.asarray(self(p.t, p.path, a), dtype=float)
                if self.bound is not None:
                    report["bound"] = max(report["bound"], float(np.max(np.abs(v))) - self.bound)
                if self.lipschitz_K is not None:
                    vq = np.asarray(self(p.t, q.path, a), dtype=float)
                    dist = sup_norm(stop(p.path, p.t) - stop(q.path, p.t))
                    excess = float(np.max(np.abs(v - vq))) - self.lipschitz_K * dist
                    report["lipschitz"] = max(report["lipschitz"], excess)
                T = p.path.T
                if p.t < T:
                    s = p.t + rng.uniform(0, T - p.t)
                    xs = stop(p.path, p.t)
                    diff = np.asarray(self(s, xs, a), dtype=float) - np.asarray(self(p.t, xs, a), dtype=float)
                    report["time_modulus"] = max(
                        report["time_modulus"], float(np.max(np.abs(diff))) - float(self.w(s - p.t))
                    )
                # paths agreeing up to t must give the same value
                xs = stop(p.path, p.t)
                v2 = np.asarray(self(p.t, xs, a), dtype=float)
                report["non_anticipative"] = max(report["non_anticipative"], float(np.max(np.abs(v - v2))))
        return report


@dataclass(frozen=True)
class CylindricalCoefficient:
    """A coefficient c(t, y, a) read through lifted coordinates y = y^{t,x}.

    ``core(t, y, a)`` is vectorized over the leading axes of y (..., d m) and returns
    shape (...,) + out_shape.
    """

    core: Callable
    weights: tuple
    d: int = 1
    out_shape: tuple = ()
    lipschitz_K: float | None = None
    bound: float | None = None
    name: str = "c"

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "out_shape", tuple(self.out_shape))

    @property
    def dim(self) -> int:
        return self.d * len(self.weights)

    def _constant_weights(self, T: float = 1.0):
        """Weights with phi' = 0 give y_j = phi_j x(t); returns their values or None."""
        vals = []
        probe = np.linspace(0.0, T, 9)
        for w in self.weights:
            if np.any(w.d(probe) != 0.0):
                return None
            vals.append(float(w(np.zeros(1))[0]))
        return np.array(vals)

    def lift_batch(self, t, times, values, T) -> np.ndarray:
        """Lifted coordinates (B, d m) of a batch of grid paths at time t."""
        cw = self._constant_weights(T)
        tb = np.broadcast_to(np.asarray(t, dtype=float), (values.shape[0],))
        if cw is not None:
            xt = batch_interp(times, values, tb)
            return np.einsum("j,bd->bjd", cw, xt).reshape(values.shape[0], -1)
        out = np.empty((values.shape[0], self.dim))
        for b in range(values.shape[0]):
            path = batch_to_path(times, values[b], T)
            out[b] = lifted_along(self.weights, path, [tb[b]])[0].reshape(-1)
        return out

    def as_spec(self) -> CoefficientSpec:
        def evaluator(t, path, a):
            y = lifted_along(self.weights, path, [t])[0].reshape(-1)
            return np.asarray(self.core(t, y[None, :], a))[0]

        def batch(t, times, values, a, T):
            y = self.lift_batch(t, times, values, T)
            tb = np.broadcast_to(np.asarray(t, dtype=float), (values.shape[0],))
            if np.all(tb == tb[0]):
                return np.asarray(self.core(float(tb[0]), y, a), dtype=float)
            return np.array([np.asarray(self.core(float(tb[b]), y[b : b + 1], a))[0] for b in range(len(tb))])

        return CoefficientSpec(evaluator, self.lipschitz_K, self.bound, batch=batch, name=self.name)
