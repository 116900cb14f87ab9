"""Reward functional, Monte-Carlo value function, DPP residual and Hamiltonian."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coefficients import CoefficientSpec
from .paths import DomainError, Path, stop
from .rng import child_seed
from .sde import ControlledSDE, PiecewiseConstantControl, SimBatch, SimConfig, simulate

__all__ = [
    "ControlProblem",
    "ValueEstimate",
    "reward",
    "value",
    "dpp_residual",
    "hamiltonian",
    "fixed_control_value",
    "MAX_CANDIDATES",
]

MAX_CANDIDATES = 100_000


@dataclass(frozen=True)
class ControlProblem:
    """Maximize E[int_t^T f(s, X, a_s) ds + g(X)] over controls.

    ``terminal_cost`` is a CoefficientSpec evaluated at (T, X, None).
    """

    sde: ControlledSDE
    running_cost: CoefficientSpec
    terminal_cost: CoefficientSpec
    name: str = "problem"

    @property
    def actions(self):
        return self.sde.actions

    @property
    def T(self) -> float:
        return self.sde.T


@dataclass
class ValueEstimate:
    mean: float
    stderr: float
    control: PiecewiseConstantControl | None = None

    def to_record(self, problem_id: str, t: float, actions=None) -> dict:
        return {
            "problem_id": problem_id,
            "t": float(t),
            "estimate": float(self.mean),
            "stderr": float(self.stderr),
            "argmax_control": None if self.control is None else self.control.to_dict(actions),
        }


def _mean_err(samples: np.ndarray) -> tuple[float, float]:
    samples = np.asarray(samples, dtype=float)
    if samples.size > 1:
        return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(samples.size))
    return float(samples.mean()), 0.0


def _terminal(fn, batch: SimBatch, s: float, a=None) -> np.ndarray:
    if isinstance(fn, CoefficientSpec):
        return np.asarray(fn.evaluate_batch(s, batch.times, batch.values, a, batch.T), dtype=float).reshape(-1)
    return np.array([float(fn(p)) for p in batch.paths()])


def _steps(t: float, T: float, m: int, cfg: SimConfig) -> int:
    """Uniform step count on [t, T] that is a multiple of the switch count m."""
    base = max(1, math.ceil((T - t) * cfg.steps_per_unit - 1e-9))
    return m * math.ceil(base / m)


def _reward_samples(problem, t, x, control, cfg, horizon=None, n_steps=None) -> tuple[np.ndarray, SimBatch]:
    batch = simulate(problem.sde, t, x, control, cfg, horizon=horizon, n_steps=n_steps, running=problem.running_cost)
    return batch.running, batch


def reward(problem: ControlProblem, t: float, x: Path, control: PiecewiseConstantControl, cfg: SimConfig) -> ValueEstimate:
    """MC mean and standard error of J(t, x, control)."""
    run, batch = _reward_samples(problem, t, x, control, cfg)
    total = run + _terminal(problem.terminal_cost, batch, problem.T)
    m, e = _mean_err(total)
    return ValueEstimate(m, e, control)


def _candidates(n_actions: int, m: int):
    return itertools.product(range(n_actions), repeat=m)


def value(
    problem: ControlProblem,
    t: float,
    x: Path,
    switch_count: int,
    cfg: SimConfig,
    mode: str = "exhaustive",
    max_candidates: int = MAX_CANDIDATES,
) -> ValueEstimate:
    """Best MC reward over piecewise-constant controls on a uniform m-interval grid.

    Every candidate reuses the same Brownian increments. ``mode="greedy"`` runs
    per-interval coordinate ascent instead of full enumeration.
    """
    T = problem.T
    if t >= T:
        g = _terminal(problem.terminal_cost, _frozen_batch(x, t, T, cfg), T)
        m_, e_ = _mean_err(g)
        return ValueEstimate(m_, e_, None)
    m = int(switch_count)
    if m < 1:
        raise DomainError("switch_count must be at least 1")
    nA = len(problem.actions)
    n_steps = _steps(t, T, m, cfg)

    def score(idx):
        ctl = PiecewiseConstantControl.uniform(t, T, idx)
        return reward_fixed_steps(problem, t, x, ctl, cfg, n_steps), ctl

    if mode == "exhaustive":
        count = nA**m
        if count > max_candidates:
            raise DomainError(f"{count} candidate controls exceed the limit {max_candidates}; use greedy mode")
        best = None
        for idx in _candidates(nA, m):
            est, ctl = score(idx)
            if best is None or est.mean > best.mean:
                best = ValueEstimate(est.mean, est.stderr, ctl)
        return best
    if mode != "greedy":
        raise DomainError(f"unknown mode {mode!r}")
    # start from the best constant control so flat regions of g do not stall the ascent
    best = None
    for a in range(nA):
        est, ctl = score([a] * m)
        if best is None or est.mean > best.mean:
            best, idx = ValueEstimate(est.mean, est.stderr, ctl), [a] * m
    for _ in range(4):
        improved = False
        for k in range(m):
            for a in range(nA):
                if a == idx[k]:
                    continue
                trial = idx.copy()
                trial[k] = a
                est, ctl = score(trial)
                if est.mean > best.mean:
                    best, idx, improved = ValueEstimate(est.mean, est.stderr, ctl), trial, True
        if not improved:
            break
    return best


def reward_fixed_steps(problem, t, x, control, cfg, n_steps) -> ValueEstimate:
    run, batch = _reward_samples(problem, t, x, control, cfg, n_steps=n_steps)
    total = run + _terminal(problem.terminal_cost, batch, problem.T)
    m, e = _mean_err(total)
    return ValueEstimate(m, e, control)


def _frozen_batch(x: Path, t: float, T: float, cfg: SimConfig) -> SimBatch:
    xs = stop(x, t)
    vals = np.broadcast_to(xs.values, (cfg.trajectories,) + xs.values.shape).copy()
    return SimBatch(xs.times, vals, np.zeros((cfg.trajectories, xs.times.size - 1, x.d, x.d)), T, t)


def dpp_residual(
    problem: ControlProblem,
    t: float,
    s: float,
    x: Path,
    switch_count: int,
    cfg: SimConfig,
    inner_cfg: SimConfig | None = None,
) -> tuple[float, float]:
    """|v(t, x) - sup over first-leg controls of E[int_t^s f + v(s, X_s)]|.

    The m switches are split between [t, s] and [s, T] in proportion to length.
    Inner values run the value estimator on each endpoint path with a child seed
    derived from the trajectory index.

    Returns
    -------
    (residual, combined standard error)
    """
    T = problem.T
    if not (t <= s <= T):
        raise DomainError("need t <= s <= T")
    full = value(problem, t, x, switch_count, cfg)
    if s == t:
        return 0.0, full.stderr
    m = int(switch_count)
    m1 = min(m, max(1, round(m * (s - t) / (T - t))))
    m2 = m - m1
    if s < T and m2 == 0:
        m2 = 1
    if s == T:
        n1 = _steps(t, T, m, cfg)
    else:
        n1 = max(1, math.ceil((s - t) * cfg.steps_per_unit - 1e-9))
        n1 = m1 * math.ceil(n1 / m1)
    inner_cfg = inner_cfg or cfg
    cache: dict[bytes, ValueEstimate] = {}
    best_mean, best_err = -np.inf, 0.0
    for idx in _candidates(len(problem.actions), m1):
        ctl = PiecewiseConstantControl.uniform(t, s, idx)
        run, batch = _reward_samples(problem, t, x, ctl, cfg, horizon=s, n_steps=n1)
        if s == T:
            inner = _terminal(problem.terminal_cost, batch, T)
        else:
            inner = np.empty(len(batch))
            for i in range(len(batch)):
                key = batch.values[i].tobytes()
                if key not in cache:
                    icfg = SimConfig(inner_cfg.steps_per_unit, inner_cfg.trajectories, child_seed(cfg.seed, i))
                    cache[key] = value(problem, s, batch.path(i), m2, icfg)
                inner[i] = cache[key].mean
        mean, err = _mean_err(run + inner)
        if mean > best_mean:
            best_mean, best_err = mean, err
    return abs(full.mean - best_mean), float(np.hypot(full.stderr, best_err))


def hamiltonian(problem: ControlProblem, t: float, x: Path, r: float, p, M, return_index: bool = False):
    """F = -max_a {<b, p> + tr(sigma sigma^T M) / 2 + f}; ties go to the first action."""
    p = np.asarray(p, dtype=float).reshape(-1)
    M = np.asarray(M, dtype=float).reshape(p.size, p.size)
    if not np.allclose(M, M.T, atol=1e-12):
        raise DomainError("M must be symmetric")
    sde = problem.sde
    xs = stop(x, t)
    scores = []
    for a in problem.actions:
        b = np.asarray(sde.drift(t, xs, a), dtype=float).reshape(sde.d)
        sig = np.asarray(sde.diffusion(t, xs, a), dtype=float).reshape(sde.d, sde.m)
        f = float(np.asarray(problem.running_cost(t, xs, a)))
        scores.append(b @ p + 0.5 * np.trace(sig @ sig.T @ M) + f)
    k = int(np.argmax(scores))
    F = -float(scores[k])
    return (F, k) if return_index else F


def fixed_control_value(
    problem: ControlProblem,
    s0: float,
    a0,
    terminal: CoefficientSpec | Callable[[Path], float],
    t: float,
    x: Path,
    cfg: SimConfig,
) -> ValueEstimate:
    """E[int_t^{s0} f(r, X, a0) dr + terminal(X stopped at s0)] under the constant action a0."""
    if s0 < t:
        raise DomainError("need t <= s0")
    ai = _action_index(problem.actions, a0)
    ctl = PiecewiseConstantControl.constant(t, problem.T, ai)
    if s0 == t:
        batch = _frozen_batch(x, t, problem.T, cfg)
        vals = _terminal(terminal, batch, s0, a0)
        m, e = _mean_err(vals)
        return ValueEstimate(m, e, ctl)
    n = None
    if s0 == problem.T:
        n = _steps(t, problem.T, 1, cfg)
    run, batch = _reward_samples(problem, t, x, ctl, cfg, horizon=s0, n_steps=n)
    m, e = _mean_err(run + _terminal(terminal, batch, s0, a0))
    return ValueEstimate(m, e, ctl)


def _action_index(actions, a0) -> int:
    for i, a in enumerate(actions):
        if np.array_equal(np.asarray(a), np.asarray(a0)):
            return i
    raise DomainError(f"action {a0!r} is not in the action set")
