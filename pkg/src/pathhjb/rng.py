"""Stateless counter-based random streams.

Every stream is a Philox generator whose key is derived from a seed and a tuple
of integer counters, so a draw depends only on (seed, counters, position) and
never on evaluation order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "child_seed", "brownian_increments", "STREAM_BROWNIAN", "STREAM_MOLLIFIER"]

STREAM_BROWNIAN = 1
STREAM_MOLLIFIER = 2
STREAM_CHILD = 3

_MASK64 = (1 << 64) - 1


def _key(seed: int, counters: tuple[int, ...]) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(int(c) for c in counters))
    return ss.generate_state(2, np.uint64)


def stream(seed: int, *counters: int) -> np.random.Generator:
    """Generator keyed by (seed, *counters)."""
    return np.random.Generator(np.random.Philox(key=_key(seed, counters)))


def child_seed(seed: int, *counters: int) -> int:
    """A 64-bit seed for a nested estimator, derived from a parent seed and counters."""
    return int(_key(seed, (STREAM_CHILD,) + counters)[0])


def brownian_increments(seed: int, trajectories, n_steps: int, m: int, dt) -> np.ndarray:
    """Brownian increments of shape (len(trajectories), n_steps, m).

    Trajectory ``i`` draws its normals from the stream keyed by (seed, i) in
    (step, component) order, so each entry is fixed by (seed, trajectory, step,
    component) and independent of how trajectories are batched.
    """
    trajectories = np.atleast_1d(np.asarray(trajectories, dtype=np.int64))
    dt = np.broadcast_to(np.asarray(dt, dtype=float), (n_steps,))
    out = np.empty((trajectories.size, n_steps, m))
    sq = np.sqrt(dt)[:, None]
    for k, i in enumerate(trajectories):
        out[k] = stream(seed, STREAM_BROWNIAN, int(i)).standard_normal((n_steps, m)) * sq
    return out
