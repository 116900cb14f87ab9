"""Rewards, value search, DPP residuals, the Hamiltonian and fixed-control values."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pathhjb import (
    CoefficientSpec,
    ControlProblem,
    ControlledSDE,
    Path,
    PiecewiseConstantControl,
    SimConfig,
    TimeGrid,
    dpp_residual,
    fixed_control_value,
    hamiltonian,
    reward,
    value,
)
from pathhjb.paths import DomainError
from pathhjb.problems import get_builtin, reachability_value

TOL = 1e-12
N_SIGMA = 3.0
CLASS_GAP = 0.02


def frozen_problem(f=0.0, g=None):
    g = g or CoefficientSpec.markovian(lambda t, x, a: np.cos(x[:, 0]), lipschitz_K=1.0, bound=1.0)
    sde = ControlledSDE(CoefficientSpec.constant(np.zeros(1)), CoefficientSpec.constant(np.zeros((1, 1))),
                        (0.0, 1.0), 1, 1, 1.0)
    return ControlProblem(sde, CoefficientSpec.constant(f), g)


def reach(T=1.0):
    return get_builtin("reachability").build(T)


def noisy_reach(sigma=0.3):
    base = reach()
    sde = ControlledSDE(base.sde.drift, CoefficientSpec.constant(np.array([[sigma]])), base.actions, 1, 1, 1.0)
    return ControlProblem(sde, base.running_cost, base.terminal_cost)


class TestReward:
    def test_frozen(self):
        x = Path.constant([0.4])
        est = reward(frozen_problem(), 0.3, x, PiecewiseConstantControl.constant(0.3, 1.0, 1), SimConfig(16, 3))
        assert est.mean == pytest.approx(np.cos(0.4), abs=TOL) and est.stderr == 0.0

    def test_running_only(self):
        p = frozen_problem(0.7, CoefficientSpec.constant(0.0))
        est = reward(p, 0.25, Path.constant([0.0]), PiecewiseConstantControl.constant(0.25, 1.0, 0), SimConfig(16))
        assert est.mean == pytest.approx(0.7 * 0.75, abs=1e-12)

    @given(st.floats(-1.5, 1.5), st.floats(0.0, 0.9), st.sampled_from([0, 1]))
    def test_reachability_constant_control(self, x0, t, ai):
        p = reach()
        est = reward(p, t, Path.constant([x0]), PiecewiseConstantControl.constant(t, 1.0, ai), SimConfig(64))
        a = p.actions[ai]
        assert est.mean == pytest.approx(-min(abs(x0 + a * (1 - t)), 1.0), abs=1e-9)


class TestValue:
    @pytest.mark.parametrize("m", [1, 3])
    def test_frozen_any_m(self, m):
        est = value(frozen_problem(), 0.2, Path.constant([0.9]), m, SimConfig(8, 2))
        assert est.mean == pytest.approx(np.cos(0.9), abs=TOL)

    @pytest.mark.parametrize("x0", [0.5, 1.3, -1.7, 2.5])
    def test_reachability_closed_form(self, x0):
        est = value(reach(), 0.0, Path.constant([x0]), 4, SimConfig(64))
        assert abs(est.mean - reachability_value(0.0, x0)) <= CLASS_GAP

    def test_dominates_fixed_controls(self):
        p, x, cfg = noisy_reach(), Path.constant([0.6]), SimConfig(32, 64, 5)
        v = value(p, 0.0, x, 3, cfg)
        for ai in (0, 1):
            r = reward(p, 0.0, x, PiecewiseConstantControl.constant(0.0, 1.0, ai), cfg)
            assert v.mean >= r.mean - 1e-12

    def test_nested_classes_monotone(self):
        p, x, cfg = noisy_reach(), Path.constant([1.6]), SimConfig(32, 64, 6)
        v2 = value(p, 0.0, x, 2, cfg)
        v4 = value(p, 0.0, x, 4, cfg)
        assert v4.mean >= v2.mean - N_SIGMA * np.hypot(v2.stderr, v4.stderr)

    def test_greedy_matches_exhaustive_here(self):
        x = Path.constant([1.4])
        a = value(reach(), 0.0, x, 4, SimConfig(32))
        b = value(reach(), 0.0, x, 4, SimConfig(32), mode="greedy")
        assert b.mean == pytest.approx(a.mean, abs=1e-12)

    @pytest.mark.parametrize("x0", [-0.096, -0.9, 0.37])
    def test_greedy_escapes_flat_start(self, x0):
        # the all-(-1) start lands where g is flat for x0 < 0; the gap of m switches is at most 1/m
        m = 32
        est = value(reach(), 0.0, Path.constant([x0]), m, SimConfig(32), mode="greedy")
        assert abs(est.mean - float(reachability_value(0.0, x0, 1.0))) <= 1.0 / m + 1e-12

    def test_candidate_guard(self):
        with pytest.raises(DomainError, match="candidate"):
            value(reach(), 0.0, Path.constant([0.0]), 20, SimConfig(8), max_candidates=1000)

    def test_bounded(self):
        # |f|, |g| <= 1 gives |v| <= T + 1
        est = value(noisy_reach(1.0), 0.0, Path.constant([3.0]), 2, SimConfig(16, 32))
        assert abs(est.mean) <= 2.0

    def test_at_horizon(self):
        est = value(reach(), 1.0, Path.constant([0.4]), 3, SimConfig(8))
        assert est.mean == pytest.approx(-0.4, abs=TOL)

    def test_record(self):
        rec = value(reach(), 0.0, Path.constant([0.2]), 2, SimConfig(8)).to_record("reach", 0.0, reach().actions)
        assert set(rec) == {"problem_id", "t", "estimate", "stderr", "argmax_control"}
        assert len(rec["argmax_control"]["actions"]) == 2


class TestDpp:
    def test_same_time(self):
        res, _ = dpp_residual(noisy_reach(), 0.3, 0.3, Path.constant([0.5]), 2, SimConfig(16, 8))
        assert res == 0.0

    def test_horizon(self):
        res, se = dpp_residual(noisy_reach(), 0.0, 1.0, Path.constant([1.5]), 2, SimConfig(16, 32))
        assert res <= N_SIGMA * se + 1e-12

    def test_midpoint_deterministic(self):
        res, se = dpp_residual(reach(), 0.0, 0.5, Path.constant([1.5]), 4, SimConfig(32))
        assert res <= CLASS_GAP + N_SIGMA * se

    def test_order(self):
        with pytest.raises(DomainError):
            dpp_residual(reach(), 0.5, 0.2, Path.constant([0.0]), 2, SimConfig(8))


class TestHamiltonian:
    def test_single_action(self):
        p = frozen_problem(0.3)
        p = ControlProblem(ControlledSDE(CoefficientSpec.constant(np.array([2.0])),
                                         CoefficientSpec.constant(np.array([[0.5]])), (0.0,), 1, 1, 1.0),
                           p.running_cost, p.terminal_cost)
        F = hamiltonian(p, 0.2, Path.constant([0.0]), 0.0, [1.5], [[4.0]])
        assert F == pytest.approx(-(2.0 * 1.5 + 0.5 * 0.25 * 4.0 + 0.3), abs=TOL)

    def test_zero_gradient(self):
        assert hamiltonian(frozen_problem(0.4), 0.0, Path.constant([1.0]), 0.0, [0.0], [[0.0]]) == -0.4

    @pytest.mark.parametrize("p,expected,k", [(2.0, -2.0, 1), (-2.0, -2.0, 0), (0.0, 0.0, 0)])
    def test_reachability(self, p, expected, k):
        F, idx = hamiltonian(reach(), 0.5, Path.constant([0.0]), 0.0, [p], [[0.0]], return_index=True)
        assert F == expected and idx == k

    def test_rejects_asymmetric(self):
        with pytest.raises(DomainError):
            hamiltonian(frozen_problem(), 0.0, Path.constant([0.0, 0.0]), 0.0, [0.0, 0.0], [[0.0, 1.0], [0.0, 0.0]])


class TestFixedControl:
    def test_zero(self):
        p = frozen_problem(0.0, CoefficientSpec.constant(0.0))
        est = fixed_control_value(p, 0.7, 1.0, CoefficientSpec.constant(0.0), 0.1, Path.constant([2.0]), SimConfig(8))
        assert est.mean == 0.0

    def test_same_time(self):
        est = fixed_control_value(reach(), 0.4, 1.0, lambda path: float(path(1.0)[0]), 0.4,
                                  Path(TimeGrid([0.0, 0.5, 1.0]), [[0.0], [0.2], [0.9]]), SimConfig(8))
        assert est.mean == pytest.approx(0.2 * 0.4 / 0.5, abs=TOL)

    def test_matches_value_single_action(self):
        base = noisy_reach()
        sde = ControlledSDE(base.sde.drift, base.sde.diffusion, (1.0,), 1, 1, 1.0)
        p = ControlProblem(sde, base.running_cost, base.terminal_cost)
        cfg, x = SimConfig(32, 200, 8), Path.constant([-0.3])
        a = fixed_control_value(p, 1.0, 1.0, p.terminal_cost, 0.0, x, cfg)
        b = value(p, 0.0, x, 1, cfg)
        assert abs(a.mean - b.mean) <= N_SIGMA * np.hypot(a.stderr, b.stderr) + 1e-12

    def test_unknown_action(self):
        with pytest.raises(DomainError):
            fixed_control_value(reach(), 0.5, 7.0, reach().terminal_cost, 0.0, Path.constant([0.0]), SimConfig(8))

