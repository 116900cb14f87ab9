from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from pathhjb import Path, TimeGrid, Weight, build_lifted, polygonal_from_nodes
from pathhjb.coefficients import CylindricalCoefficient
from pathhjb.problems import get_builtin

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# reference path shared with tests/oracles/derive_frozen.py
P1_VALUES = [0.1, -0.3, 0.4, 0.2, -0.5]


@pytest.fixture
def p1() -> Path:
    return polygonal_from_nodes(2, P1_VALUES)


def random_path(rng: np.random.Generator, d: int = 1, n_steps: int = 16, T: float = 1.0, scale: float = 1.0) -> Path:
    """Random-walk polygon on a jittered grid."""
    inner = np.sort(rng.uniform(0, T, size=n_steps - 1))
    times = np.concatenate([[0.0], inner, [T]])
    times = np.unique(times)
    vals = rng.normal(scale=scale * np.sqrt(T / n_steps), size=(times.size, d)).cumsum(axis=0)
    return Path(TimeGrid(times), vals)


@st.composite
def paths(draw, d: int = 1, max_nodes: int = 12, T: float = 1.0):
    n = draw(st.integers(min_value=2, max_value=max_nodes))
    seed = draw(st.integers(min_value=0, max_value=2**32 - 1))
    rng = np.random.default_rng(seed)
    return random_path(rng, d, n, T)


times01 = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


def lifted(weights=(Weight.constant(1.0),), b=0.0, sigma=0.0, f=0.0, g=None, actions=(0.0,), d=1, T=1.0):
    """Lifted problem with constant drift/diffusion/running cost and terminal g(y)."""
    W = tuple(weights)
    g = g or (lambda y: y[..., 0])
    cyl = lambda fn, shape, bound, name: CylindricalCoefficient(fn, W, d, shape, 0.0, bound, name)
    return build_lifted(
        cyl(lambda t, y, a: np.full(y.shape[:-1] + (d,), b), (d,), abs(b) + 1.0, "b"),
        cyl(lambda t, y, a: np.full(y.shape[:-1] + (d, d), sigma), (d, d), abs(sigma), "sigma"),
        cyl(lambda t, y, a: np.full(y.shape[:-1], f), (), abs(f), "f"),
        CylindricalCoefficient(lambda t, y, a: g(y), W, d, (), 1.0, None, "g"),
        actions,
        T,
    )


def reach_lifted(T=1.0):
    return get_builtin("markovian-lifted").lifted(T)


# one PASS/FAIL line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
