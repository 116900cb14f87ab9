"""One-sided viscosity inequalities, touching reports and classical residuals."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import lifted, random_path, reach_lifted
from pathhjb import (
    CoefficientSpec,
    ControlledSDE,
    ControlProblem,
    CylindricalFunctional,
    GaugePoint,
    GridConfig,
    Path,
    PathFunctional,
    Weight,
    classical_residual,
    rho_infinity,
    solve,
    subsolution_lhs,
    supersolution_lhs,
    touching_report,
)
from pathhjb.paths import DomainError
from pathhjb.viscosity import residual_csv, scheme_tolerance

TOL = 1e-12
ONE = (Weight.constant(1.0),)


def frozen_problem(f=0.0):
    sde = ControlledSDE(CoefficientSpec.constant(np.zeros(1)), CoefficientSpec.constant(np.zeros((1, 1))),
                        (0.0,), 1, 1, 1.0)
    return ControlProblem(sde, CoefficientSpec.constant(f), CoefficientSpec.constant(0.0))


def const_test(c=2.0):
    return CylindricalFunctional(lambda t, y: c, ONE, core_dt=lambda t, y: 0.0, core_dy=lambda t, y: np.zeros(1),
                                 core_dyy=lambda t, y: np.zeros((1, 1)))


def time_test():
    return CylindricalFunctional(lambda t, y: t + y[0] ** 2, ONE, core_dt=lambda t, y: 1.0,
                                 core_dy=lambda t, y: 2 * y, core_dyy=lambda t, y: 2 * np.eye(1))


def samples(rng, k=8, t_max=0.6, radius=1.0):
    return [GaugePoint(float(rng.uniform(0.05, t_max)), Path.constant([float(rng.uniform(-radius, radius))]))
            for _ in range(k)]


class TestLhs:
    @pytest.mark.parametrize("c", [0.0, 0.4, -1.3])
    def test_constant_test_gives_minus_f(self, c):
        p = GaugePoint(0.3, random_path(np.random.default_rng(0)))
        assert subsolution_lhs(frozen_problem(c), 5.0, const_test(), p) == pytest.approx(-c, abs=TOL)
        assert supersolution_lhs(frozen_problem(c), 5.0, const_test(), p) == pytest.approx(-c, abs=TOL)

    def test_unit_time_derivative(self):
        p = GaugePoint(0.3, random_path(np.random.default_rng(1)))
        assert subsolution_lhs(frozen_problem(), 0.0, time_test(), p) == pytest.approx(-1.0, abs=TOL)

    def test_path_functional_test(self):
        u = PathFunctional(lambda t, x: t + float(x(t)[0] ** 2))
        p = GaugePoint(0.3, random_path(np.random.default_rng(2)))
        assert subsolution_lhs(frozen_problem(), 0.0, u, p) == pytest.approx(-1.0, abs=1e-6)

    @given(st.integers(0, 2**31), st.floats(-2, 2), st.floats(-2, 2))
    def test_antisymmetry(self, seed, u, extra):
        p = GaugePoint(0.4, random_path(np.random.default_rng(seed)))
        cp = reach_lifted().to_control_problem()
        a = subsolution_lhs(cp, u, time_test(), p, extra)
        b = supersolution_lhs(cp, u, time_test(), p, extra, reversed=True)
        assert a == -b

    def test_horizon_rejected(self):
        with pytest.raises(DomainError):
            subsolution_lhs(frozen_problem(), 0.0, time_test(), GaugePoint(1.0, Path.constant([0.0])))


class TestTouching:
    def test_identical(self):
        rng = np.random.default_rng(3)
        p = GaugePoint(0.2, random_path(rng))
        probes = [GaugePoint(float(rng.uniform(0.2, 1)), random_path(rng)) for _ in range(20)]
        rep = touching_report(time_test(), time_test(), p, probes)
        assert rep["gap_at_p"] == 0.0 and rep["touching"] and rep["worst_violation"] == 0.0

    @pytest.mark.parametrize("kind,sign", [("sub", 1.0), ("super", -1.0)])
    def test_gauge_bump_touches_strictly(self, kind, sign):
        rng = np.random.default_rng(4)
        p = GaugePoint(0.3, random_path(rng))
        u = time_test()
        phi = lambda t, x: u(t, x) + sign * rho_infinity(GaugePoint(t, x), p).value
        probes = [GaugePoint(float(rng.uniform(0.3, 1)), random_path(rng)) for _ in range(30)]
        rep = touching_report(u, phi, p, probes, kind)
        assert rep["touching"] and rep["gap_at_p"] == 0.0

    @given(st.integers(0, 2**31), st.sampled_from(["sub", "super"]))
    def test_matches_brute_force(self, seed, kind):
        rng = np.random.default_rng(seed)
        c = rng.normal(size=3)
        u = lambda t, x: float(c[0] * x(t)[0] + c[1] * t)
        phi = lambda t, x: float(c[2] * x(t)[0] ** 2)
        p = GaugePoint(0.25, random_path(rng))
        probes = [GaugePoint(float(rng.uniform(0.25, 1)), random_path(rng)) for _ in range(15)]
        diffs = np.array([u(q.t, q.path) - phi(q.t, q.path) for q in probes])
        base = u(p.t, p.path) - phi(p.t, p.path)
        viol = (diffs - base) if kind == "sub" else (base - diffs)
        rep = touching_report(u, phi, p, probes, kind)
        assert rep["worst_violation"] == pytest.approx(max(0.0, viol.max()), abs=TOL)
        assert rep["touching"] == bool(viol.max() <= 0)

    def test_early_probe_rejected(self):
        p = GaugePoint(0.5, Path.constant([0.0]))
        with pytest.raises(DomainError):
            touching_report(time_test(), time_test(), p, [GaugePoint(0.4, Path.constant([0.0]))])
        with pytest.raises(DomainError):
            touching_report(time_test(), time_test(), p, [], kind="both")


class TestClassicalResidual:
    def test_linear_terminal_static(self):
        prob = lifted()
        sol = solve(prob, 0.2, GridConfig(time_nodes=21, space_nodes=41, half_width=2.0))
        rep = classical_residual(sol, prob, samples(np.random.default_rng(5)))
        assert rep["max"] <= 1e-8

    def test_running_cost(self):
        prob = lifted(f=0.6)
        sol = solve(prob, 0.2, GridConfig(time_nodes=21, space_nodes=41, half_width=2.0))
        rep = classical_residual(sol, prob, samples(np.random.default_rng(6)))
        assert rep["max"] <= 1e-8

    def test_refinement_decreases(self):
        prob, pts = reach_lifted(), samples(np.random.default_rng(7), 10, 0.5, 1.2)
        res = []
        for N, nt in [(101, 51), (201, 101)]:
            sol = solve(prob, 0.2, GridConfig(time_nodes=nt, space_nodes=N, y0=(0.5,)))
            res.append(classical_residual(sol, prob, pts)["max"])
        assert res[1] <= 0.6 * res[0]

    def test_signs_within_scheme_tolerance(self):
        prob = reach_lifted()
        cp = prob.to_control_problem()
        sol = solve(prob, 0.2, GridConfig(time_nodes=101, space_nodes=201, y0=(0.5,)))
        v = sol.functional()
        for p in samples(np.random.default_rng(8), 10, 0.5, 1.2):
            y = v.lift(p.path, p.t)
            _, _, H = sol.partials(p.t, y)
            extra = 0.5 * 0.04 * np.trace(H)
            tol = scheme_tolerance(sol, prob, p)
            assert subsolution_lhs(cp, sol(p.t, y), v, p, extra) <= tol
            assert supersolution_lhs(cp, sol(p.t, y), v, p, extra) >= -tol

    def test_csv(self):
        prob = lifted()
        sol = solve(prob, 0.2, GridConfig(time_nodes=11, space_nodes=21, half_width=2.0))
        text = residual_csv(classical_residual(sol, prob, samples(np.random.default_rng(9), 3)))
        lines = text.splitlines()
        assert lines[0] == "t,y1,residual" and len(lines) == 4
