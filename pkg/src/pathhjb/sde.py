"""Euler-Maruyama simulation of controlled path-dependent SDEs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coefficients import CoefficientSpec, CylindricalCoefficient, batch_interp, batch_to_path
from .paths import DomainError, Path

__all__ = [
    "PiecewiseConstantControl",
    "ControlledSDE",
    "SimConfig",
    "SimBatch",
    "simulate",
    "sup_moment",
    "continuity_diagnostic",
]


@dataclass(frozen=True)
class PiecewiseConstantControl:
    """Action indices held constant between switching times.

    ``switch_times`` has m + 1 increasing entries; interval k is
    [switch_times[k], switch_times[k+1]) and uses actions[indices[k]].
    """

    switch_times: tuple
    indices: tuple

    def __post_init__(self):
        st = tuple(float(s) for s in self.switch_times)
        idx = tuple(int(i) for i in self.indices)
        if len(st) != len(idx) + 1 or any(b <= a for a, b in zip(st, st[1:])):
            raise DomainError("switching grid must be increasing with one more entry than indices")
        object.__setattr__(self, "switch_times", st)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def uniform(cls, t: float, T: float, indices: Sequence[int]) -> "PiecewiseConstantControl":
        m = len(indices)
        return cls(tuple(np.linspace(t, T, m + 1)), tuple(indices))

    @classmethod
    def constant(cls, t: float, T: float, index: int) -> "PiecewiseConstantControl":
        return cls((t, T), (index,))

    def index_at(self, s: float) -> int:
        st = self.switch_times
        tol = 1e-12 * max(1.0, abs(st[-1]))
        if s < st[0] - tol or s >= st[-1] + tol:
            raise DomainError(f"control undefined at time {s}")
        k = int(np.searchsorted(st, s + tol, side="right") - 1)
        return self.indices[min(max(k, 0), len(self.indices) - 1)]

    def to_dict(self, actions=None) -> dict:
        out = {"switch_times": list(self.switch_times), "indices": list(self.indices)}
        if actions is not None:
            out["actions"] = [np.asarray(actions[i]).tolist() for i in self.indices]
        return out


def _as_spec(c) -> CoefficientSpec:
    return c.as_spec() if isinstance(c, CylindricalCoefficient) else c


@dataclass(frozen=True)
class ControlledSDE:
    """dX = b(s, X, a) ds + sigma(s, X, a) dB with X in R^d and B in R^m.

    ``drift`` returns shape (d,) per path and ``diffusion`` shape (d, m).
    """

    drift: CoefficientSpec
    diffusion: CoefficientSpec
    actions: tuple
    d: int = 1
    m: int = 1
    T: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "drift", _as_spec(self.drift))
        object.__setattr__(self, "diffusion", _as_spec(self.diffusion))
        object.__setattr__(self, "actions", tuple(self.actions))


@dataclass(frozen=True)
class SimConfig:
    steps_per_unit: int = 64
    trajectories: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.steps_per_unit < 1 or self.trajectories < 1:
            raise DomainError("simulation counts must be positive")


@dataclass
class SimBatch:
    """Trajectories on a shared grid.

    Attributes
    ----------
    times : (N,) grid, ending at the simulation horizon
    values : (B, N, d)
    qv : (B, N-1, d, d) quadratic-variation increment per grid step (zero before t)
    running : (B,) left-point sum of the running cost, if one was supplied
    """

    times: np.ndarray
    values: np.ndarray
    qv: np.ndarray
    T: float
    t0: float
    running: np.ndarray | None = None
    action_per_step: list = field(default_factory=list)

    def __len__(self):
        return self.values.shape[0]

    def path(self, i: int) -> Path:
        return batch_to_path(self.times, self.values[i], self.T)

    def paths(self) -> list[Path]:
        return [self.path(i) for i in range(len(self))]

    def to_csv(self) -> str:
        d = self.values.shape[2]
        lines = ["traj,s," + ",".join(f"x{i + 1}" for i in range(d))]
        for b in range(len(self)):
            for s, row in zip(self.times, self.values[b]):
                lines.append(",".join([str(b), repr(float(s))] + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"


def simulate(
    sde: ControlledSDE,
    t: float,
    x: Path,
    control: PiecewiseConstantControl,
    cfg: SimConfig,
    horizon: float | None = None,
    n_steps: int | None = None,
    running: CoefficientSpec | None = None,
    increments: np.ndarray | None = None,
) -> SimBatch:
    """Euler-Maruyama trajectories started from x on [0, t].

    Parameters
    ----------
    horizon : float, optional
        Final simulation time (default T); paths are frozen after it.
    n_steps : int, optional
        Number of uniform steps on [t, horizon]; default ceil((horizon - t) steps_per_unit).
    running : CoefficientSpec, optional
        Running cost accumulated by left-point sums.
    increments : array (B, n_steps, m), optional
        Brownian increments to use instead of the seeded stream.
    """
    T = sde.T
    H = T if horizon is None else float(horizon)
    if not (0.0 <= t <= H <= T):
        raise DomainError("need 0 <= t <= horizon <= T")
    if x.T != T:
        raise DomainError("initial path must be defined on [0, T]")
    B, d, m = cfg.trajectories, sde.d, sde.m
    pre = x.times[x.times < t]
    pre_vals = x.values[: pre.size]
    if n_steps is None:
        n_steps = max(1, math.ceil((H - t) * cfg.steps_per_unit - 1e-9)) if H > t else 0
    if H == t:
        n_steps = 0
    step_times = np.linspace(t, H, n_steps + 1)
    times = np.concatenate([pre, step_times])
    K0 = pre.size
    N = times.size
    values = np.empty((B, N, d))
    values[:, :K0] = pre_vals
    values[:, K0] = x(t)
    qv = np.zeros((B, N - 1, d, d))
    cost = np.zeros(B) if running is not None else None
    if n_steps:
        dts = np.diff(step_times)
        if increments is None:
            dB = _increments(cfg.seed, B, n_steps, m, dts)
        else:
            dB = np.asarray(increments, dtype=float).reshape(B, n_steps, m)
    acts = []
    for k in range(n_steps):
        tk = step_times[k]
        a = sde.actions[control.index_at(tk)]
        acts.append(a)
        j = K0 + k
        tt, vv = times[: j + 1], values[:, : j + 1]
        b = np.asarray(sde.drift.evaluate_batch(tk, tt, vv, a, T)).reshape(B, d)
        sig = np.asarray(sde.diffusion.evaluate_batch(tk, tt, vv, a, T)).reshape(B, d, m)
        if running is not None:
            cost += np.asarray(running.evaluate_batch(tk, tt, vv, a, T)).reshape(B) * dts[k]
        values[:, j + 1] = values[:, j] + b * dts[k] + np.einsum("bdm,bm->bd", sig, dB[:, k])
        qv[:, j] = np.einsum("bdm,bem->bde", sig, sig) * dts[k]
    return SimBatch(times, values, qv, T, float(t), cost, acts)


def _increments(seed, B, n_steps, m, dts):
    from .rng import brownian_increments

    return brownian_increments(seed, np.arange(B), n_steps, m, dts)


def _batch_values(batch) -> np.ndarray:
    if isinstance(batch, SimBatch):
        return batch.values
    if isinstance(batch, np.ndarray):
        return batch
    return [p.values for p in batch]


def sup_moment(batch, p: float = 2.0) -> float:
    """(mean over trajectories of sup_s |X_s|^p)^{1/p}."""
    if p < 1:
        raise DomainError("p must be at least 1")
    vals = _batch_values(batch)
    if len(vals) == 0:
        raise DomainError("empty batch")
    sups = np.array([np.sqrt(np.max(np.sum(np.asarray(v) ** 2, axis=-1))) for v in vals])
    return float(np.mean(sups**p) ** (1.0 / p))


def continuity_diagnostic(
    sde: ControlledSDE,
    t: float,
    x: Path,
    r_values: Sequence[float],
    cfg: SimConfig,
    actions: Sequence[int] | None = None,
) -> dict:
    """max over constant controls of E[sup_s |X_{s ^ r} - x(s ^ t)|^2] for each r.

    Returns {"rows": [{"r", "value", "stderr", "action"}], "monotone": bool}, rows
    ordered by increasing r.
    """
    r_values = np.sort(np.asarray(r_values, dtype=float))
    if np.any(r_values < t) or np.any(r_values > sde.T):
        raise DomainError("r values must lie in [t, T]")
    idx = range(len(sde.actions)) if actions is None else actions
    xt = x(t)
    H = float(r_values.max())
    best = [None] * r_values.size
    for ai in idx:
        ctl = PiecewiseConstantControl.constant(t, sde.T, ai)
        batch = simulate(sde, t, x, ctl, cfg, horizon=H)
        after = batch.times >= t
        ts, vals = batch.times[after], batch.values[:, after]
        for k, r in enumerate(r_values):
            keep = ts <= r
            seg = vals[:, keep]
            end = batch_interp(ts, vals, r)
            sq = np.maximum(np.max(np.sum((seg - xt) ** 2, axis=-1), axis=1), np.sum((end - xt) ** 2, axis=-1))
            mean = float(sq.mean())
            err = float(sq.std(ddof=1) / np.sqrt(sq.size)) if sq.size > 1 else 0.0
            if best[k] is None or mean > best[k]["value"]:
                best[k] = {"r": float(r), "value": mean, "stderr": err, "action": int(ai)}
    vals = [row["value"] for row in best]
    return {"rows": best, "monotone": bool(all(a <= b + 1e-15 for a, b in zip(vals, vals[1:])))}
