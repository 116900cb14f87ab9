"""Pathwise derivatives, cylindrical functionals and the Ito residual."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import paths, random_path
from pathhjb import (
    CylindricalFunctional,
    GaugePoint,
    Path,
    PathFunctional,
    TimeGrid,
    Weight,
    cylindrical_derivatives,
    horizontal_derivative,
    ito_residual,
    stop,
    vertical_derivative,
)
from pathhjb.functional import bump, check_non_anticipative, stacking_matrix
from pathhjb.paths import DomainError
from pathhjb.rng import brownian_increments

TOL = 1e-12
DERIV_TOL = 1e-4


def quad_core(A, c, w):
    """core(t, y) = y^T A y / 2 + c.y sin(w t) with exact partials."""
    A = 0.5 * (A + A.T)
    return dict(
        core=lambda t, y: 0.5 * y @ A @ y + np.sin(w * t) * c @ y,
        core_dt=lambda t, y: w * np.cos(w * t) * c @ y,
        core_dy=lambda t, y: A @ y + np.sin(w * t) * c,
        core_dyy=lambda t, y: A,
    )


def random_cylindrical(rng, d=1):
    m = int(rng.integers(1, 3))
    pool = [Weight.constant(1.0), Weight.exponential(-1.0), Weight.cosine(2.0), Weight.polynomial([1.0, 0.5])]
    weights = [pool[i] for i in rng.choice(len(pool), size=m, replace=False)]
    D = d * m
    return CylindricalFunctional(weights=weights, d=d, **quad_core(rng.normal(size=(D, D)), rng.normal(size=D), 1.3))


def assert_derivs_close(a, b, tol=DERIV_TOL):
    for u, v in zip(a, b):
        assert np.max(np.abs(np.atleast_1d(u) - np.atleast_1d(v))) <= tol


class TestBump:
    def test_shifts_from_t(self):
        x = random_path(np.random.default_rng(0))
        b = bump(x, 0.4, np.array([0.5]))
        assert b(0.4)[0] == pytest.approx(x(0.4)[0] + 0.5, abs=TOL)
        assert b(0.3)[0] == pytest.approx(x(0.3)[0], abs=TOL)
        assert b(1.0)[0] == pytest.approx(x(1.0)[0] + 0.5, abs=TOL)


class TestHorizontal:
    def test_linear_core(self):
        u = CylindricalFunctional(lambda t, y: t * y[0], [Weight.constant(1.0)])
        x = random_path(np.random.default_rng(1))
        assert horizontal_derivative(u, GaugePoint(0.3, x)) == pytest.approx(x(0.3)[0], abs=1e-6)

    def test_time_independent_is_zero(self):
        u = PathFunctional(lambda t, x: float(x(t)[0] ** 2))
        x = random_path(np.random.default_rng(2))
        assert horizontal_derivative(u, GaugePoint(0.5, x)) == 0.0

    def test_clamps_near_horizon(self):
        u = PathFunctional(lambda t, x: t)
        val, step = horizontal_derivative(u, GaugePoint(1.0 - 1e-7, Path.constant([0.0])), 1e-5, return_step=True)
        assert step == pytest.approx(1e-7, rel=1e-6) and val == pytest.approx(1.0, rel=1e-6)
        val, step = horizontal_derivative(u, GaugePoint(1.0, Path.constant([0.0])), 1e-5, return_step=True)
        assert step == 1e-5 and val == pytest.approx(1.0, rel=1e-9)

    def test_rejects_bad_step(self):
        with pytest.raises(DomainError):
            horizontal_derivative(PathFunctional(lambda t, x: t), GaugePoint(0.1, Path.constant([0.0])), -1.0)


class TestVertical:
    def test_square(self):
        u = PathFunctional(lambda t, x: float(x(t)[0] ** 2))
        x = random_path(np.random.default_rng(3))
        p = GaugePoint(0.6, x)
        assert vertical_derivative(u, p, 1)[0] == pytest.approx(2 * x(0.6)[0], abs=1e-8)
        assert vertical_derivative(u, p, 2)[0, 0] == pytest.approx(2.0, abs=1e-6)

    def test_constant(self):
        u = PathFunctional(lambda t, x: 4.0)
        p = GaugePoint(0.6, random_path(np.random.default_rng(4), d=2))
        assert np.all(vertical_derivative(u, p, 1) == 0) and np.all(vertical_derivative(u, p, 2) == 0)

    def test_rejects_order(self):
        with pytest.raises(DomainError):
            vertical_derivative(PathFunctional(lambda t, x: 0.0), GaugePoint(0.1, Path.constant([0.0])), 3)


class TestCylindrical:
    def test_identity_core(self):
        u = CylindricalFunctional(lambda t, y: y[0], [Weight.constant(1.0)])
        H, V1, V2 = cylindrical_derivatives(u, GaugePoint(0.4, random_path(np.random.default_rng(5))))
        assert H == pytest.approx(0.0, abs=1e-8) and V1[0] == pytest.approx(1.0, abs=1e-8)
        assert V2[0, 0] == pytest.approx(0.0, abs=1e-4)

    def test_time_core(self):
        u = CylindricalFunctional(lambda t, y: t, [Weight.exponential(-1.0), Weight.cosine()],
                                  core_dt=lambda t, y: 1.0, core_dy=lambda t, y: np.zeros(2),
                                  core_dyy=lambda t, y: np.zeros((2, 2)))
        H, V1, V2 = cylindrical_derivatives(u, GaugePoint(0.4, random_path(np.random.default_rng(6))))
        assert (H, float(V1[0]), float(V2[0, 0])) == (1.0, 0.0, 0.0)

    def test_square_with_exponential_weight(self):
        u = CylindricalFunctional(lambda t, y: y[0] ** 2, [Weight.exponential(-1.0)],
                                  core_dt=lambda t, y: 0.0, core_dy=lambda t, y: 2 * y,
                                  core_dyy=lambda t, y: 2 * np.eye(1))
        p = GaugePoint(0.7, random_path(np.random.default_rng(7)))
        y = u.lift(p.path, p.t)[0]
        _, V1, _ = cylindrical_derivatives(u, p)
        assert V1[0] == pytest.approx(2 * y * np.exp(-0.7), abs=TOL)
        assert vertical_derivative(u, p, 1)[0] == pytest.approx(V1[0], abs=DERIV_TOL)

    def test_stacking_matrix(self):
        S = stacking_matrix([Weight.constant(2.0), Weight.exponential(-1.0)], 0.0, 2)
        assert np.array_equal(S, np.vstack([2 * np.eye(2), np.eye(2)]))

    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("d", [1, 2])
    def test_numeric_matches_analytic(self, seed, d):
        rng = np.random.default_rng(seed)
        u = random_cylindrical(rng, d)
        p = GaugePoint(float(rng.uniform(0.05, 0.9)), random_path(rng, d))
        num = (horizontal_derivative(u, p, 1e-5), vertical_derivative(u, p, 1, 1e-4), vertical_derivative(u, p, 2, 1e-4))
        assert_derivs_close(num, cylindrical_derivatives(u, p))

    def test_vertical_central_order_two(self):
        u = CylindricalFunctional(lambda t, y: np.sin(y[0]) + y[1] ** 3, [Weight.constant(1.0), Weight.exponential(-1.0)])
        p = GaugePoint(0.5, random_path(np.random.default_rng(8)))
        y = u.lift(p.path, 0.5)
        exact = np.cos(y[0]) + 3 * y[1] ** 2 * np.exp(-0.5)
        errs = [abs(vertical_derivative(u, p, 1, h)[0] - exact) for h in (1e-1, 5e-2, 2.5e-2)]
        assert np.log2(errs[0] / errs[1]) >= 1.8 and np.log2(errs[1] / errs[2]) >= 1.8

    def test_supplied_partials_consistent(self):
        rng = np.random.default_rng(9)
        u = random_cylindrical(rng, 2)
        samples = [(float(rng.uniform()), rng.normal(size=u.dim)) for _ in range(20)]
        assert u.check_partials(samples) <= 1e-5


class TestNonAnticipative:
    @given(paths(d=2), st.floats(0.0, 1.0))
    def test_stopped_path_same_value(self, x, t):
        u = CylindricalFunctional(lambda t, y: float(np.sum(np.sin(y))), [Weight.constant(1.0), Weight.cosine(2.0)], d=2)
        assert abs(u(t, x) - u(t, stop(x, t))) <= TOL

    def test_tail_perturbations(self):
        rng = np.random.default_rng(10)
        u = CylindricalFunctional(lambda t, y: float(y @ y), [Weight.exponential(-2.0)], d=2)
        pts = [GaugePoint(float(rng.uniform()), random_path(rng, 2)) for _ in range(50)]
        assert check_non_anticipative(u, pts) <= TOL


class TestIto:
    def test_constant_is_zero(self):
        u = CylindricalFunctional(lambda t, y: 3.0, [Weight.constant(1.0)], core_dt=lambda t, y: 0.0,
                                  core_dy=lambda t, y: np.zeros(1), core_dyy=lambda t, y: np.zeros((1, 1)))
        x = random_path(np.random.default_rng(11), n_steps=32)
        assert ito_residual(u, x, np.zeros((x.times.size - 1, 1, 1))) == 0.0

    def test_deterministic_linear_order_one(self):
        u = CylindricalFunctional(lambda t, y: t * y[0], [Weight.exponential(-1.0)],
                                  core_dt=lambda t, y: y[0], core_dy=lambda t, y: np.array([t]),
                                  core_dyy=lambda t, y: np.zeros((1, 1)))
        res = []
        for n in (32, 64, 128):
            s = np.linspace(0, 1, n + 1)
            x = Path(TimeGrid(s), np.sin(3 * s)[:, None])
            res.append(ito_residual(u, x, np.zeros((n, 1, 1))))
        assert np.log2(res[0] / res[1]) >= 0.9 and np.log2(res[1] / res[2]) >= 0.9

    def test_brownian_square_decays(self):
        u = CylindricalFunctional(lambda t, y: y[0] ** 2, [Weight.constant(1.0)], core_dt=lambda t, y: 0.0,
                                  core_dy=lambda t, y: 2 * y, core_dyy=lambda t, y: 2 * np.eye(1))
        fine = brownian_increments(5, range(100), 2**10, 1, 2.0**-10)[..., 0]
        rms = []
        for lev in range(6, 11):
            inc = fine.reshape(100, 2**lev, -1).sum(axis=2)
            s = np.linspace(0, 1, 2**lev + 1)
            r = []
            for b in range(100):
                x = Path(TimeGrid(s), np.concatenate([[0.0], inc[b].cumsum()])[:, None])
                r.append(ito_residual(u, x, np.full((2**lev, 1, 1), 2.0**-lev)))
            rms.append(np.sqrt(np.mean(np.square(r))))
        assert np.all(np.diff(rms) < 0)
