from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ginigrad.gini import frechet_gini
from ginigrad.grid import DensityField, Grid, integrate, normalize_to_m1, second_derivative
from ginigrad.kernels import TransactionKernel, diffusion_coefficient, yard_sale_kernel
from ginigrad.pde import (
    SchemeConfig,
    StabilityError,
    dt_from_coefficient,
    make_state,
    rhs,
    solve,
    stable_dt,
    step_pde,
)

YS = yard_sale_kernel()


def constant_kernel(c: float) -> TransactionKernel:
    return TransactionKernel("const", lambda x, y: np.full(np.broadcast(x, y).shape, c * c),
                             lambda x, y, r: np.zeros(np.broadcast(x, y).shape))


@pytest.fixture(scope="module")
def reference_run():
    rho0 = DensityField.exponential(Grid(20.0, 400))
    return solve(rho0, YS, 0.1, 5.0, SchemeConfig(T=5.0, gamma=0.1, snapshot_every=50))


class TestStableDt:
    def test_formula(self):
        assert dt_from_coefficient(np.full(11, 0.5), 0.1, 1.0, 5.0) == pytest.approx(0.01)

    def test_static_state(self):
        rho = DensityField(Grid(5.0, 21), np.zeros(21))
        assert stable_dt(rho, YS, 0.1, T=3.0) == 3.0

    def test_yard_sale_exponential(self):
        g = Grid(20.0, 400)
        rho = DensityField.exponential(g)
        w = g.nodes
        dmax = max(0.05 * integrate(np.minimum(x, w) ** 2 * rho.values, g) for x in w)
        assert stable_dt(rho, YS, 0.1) == pytest.approx(0.5 * g.h**2 / (2 * dmax), rel=1e-12)


class TestStep:
    def test_zero_is_fixed_point(self):
        g = Grid(5.0, 21)
        s = make_state(DensityField(g, np.zeros(21)), YS, 0.1)
        np.testing.assert_array_equal(step_pde(s, YS, 0.1, 0.01).rho.values, 0.0)

    def test_constant_coefficient_matches_stencil(self):
        g = Grid(4.0, 81)
        c, gamma, dt = 1.3, 0.2, 1e-3
        rho = DensityField.bump(g, 1.5, 0.3, normalize=False)
        new = step_pde(make_state(rho, constant_kernel(c), gamma), constant_kernel(c), gamma, dt).rho.values
        # independent oracle: explicit heat step on Phi = (gamma c^2 / 2) rho with the boundary closure
        D = 0.5 * gamma * c * c * integrate(rho.values, g)
        phi = D * rho.values
        phi[[0, -1]] = 0.0
        expect = rho.values.copy()
        h = g.h
        expect[1:-1] += dt * (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / h**2
        expect[0] += dt * (phi[1] - phi[0]) / h / (h / 2)
        expect[-1] += dt * (phi[-2] - phi[-1]) / h / (h / 2)
        np.testing.assert_allclose(new, expect, rtol=1e-13, atol=1e-15)

    @given(st.integers(0, 2**32 - 1))
    def test_moments_conserved_per_step(self, seed):
        r = np.random.default_rng(seed)
        g = Grid(10.0, 120)
        centers = r.uniform(0.5, 4, 2)

        def prof(w):
            return sum(np.exp(-((w - c) ** 2)) for c in centers) + 1e-3

        rho = normalize_to_m1(prof, g)
        s = make_state(rho, YS, 0.5)
        new = step_pde(s, YS, 0.5, stable_dt(rho, YS, 0.5)).rho
        assert new.m0 == pytest.approx(rho.m0, rel=1e-14)
        assert new.m1 == pytest.approx(rho.m1, rel=1e-14)

    def test_unstable_step_raises(self):
        rho = DensityField.exponential(Grid(20.0, 400))
        s = make_state(rho, YS, 0.1)
        with pytest.raises(StabilityError, match="negative density"):
            for _ in range(50):
                s = step_pde(s, YS, 0.1, 40 * stable_dt(rho, YS, 0.1))

    def test_rhs_is_flux_form_of_gini_gradient(self):
        # the solver's right-hand side is (D rho)'' with pinned ends
        g = Grid(20.0, 400)
        rho = DensityField.exponential(g)
        D = diffusion_coefficient(YS, rho, 0.1)
        r = rhs(rho, YS, 0.1)
        d2 = second_derivative(D * rho.values, g)
        assert np.max(np.abs(r[2:-2] - d2[2:-2])) < 1e-12
        assert integrate(r, g) == pytest.approx(0.0, abs=1e-15)
        assert integrate(g.nodes * r, g) == pytest.approx(0.0, abs=1e-14)
        assert np.allclose(second_derivative(frechet_gini(rho), g)[1:-1], rho.values[1:-1])


class TestSchemeConfig:
    @pytest.mark.parametrize("kw", [{"dt": "fast"}, {"dt": 0.0}, {"T": -1}, {"gamma": 2.0},
                                    {"safety": 0.0}, {"safety": 1.5}, {"snapshot_every": 0}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            SchemeConfig(**kw)


class TestSolve:
    def test_rejects_non_m1(self):
        g = Grid(20.0, 200)
        spike = np.zeros(200)
        spike[1] = 1.0 / g.h
        with pytest.raises(ValueError, match="unit mass and mean"):
            solve(DensityField(g, spike), YS, 0.1, 1.0)

    def test_conservation(self, reference_run):
        d0, d1 = reference_run.max_relative_drift()
        assert d0 < 1e-12 and d1 < 1e-12

    def test_gini_monotone(self, reference_run):
        assert reference_run.min_gini_increment() >= -1e-10
        assert reference_run.gini[0] == pytest.approx(0.5, abs=2e-3)
        assert reference_run.gini[-1] > reference_run.gini[0] + 0.02

    def test_density_stays_nonnegative(self, reference_run):
        assert reference_run.snapshots.min() >= -1e-12

    def test_snapshots(self, reference_run):
        tr = reference_run
        assert tr.snapshot_t[0] == 0.0
        assert tr.snapshot_t[-1] == pytest.approx(5.0)
        np.testing.assert_allclose(tr.snapshot_t[:-1], tr.t[::50][: tr.n_snapshots - 1])

    def test_dt_divides_horizon(self, reference_run):
        n = reference_run.t.size - 1
        assert n * reference_run.dt == pytest.approx(5.0, rel=1e-13)
        assert reference_run.dt <= stable_dt(DensityField.exponential(Grid(20.0, 400)), YS, 0.1)

    def test_explicit_dt_above_cfl_fails(self):
        rho0 = DensityField.exponential(Grid(20.0, 400))
        dt = 50 * stable_dt(rho0, YS, 0.1)
        with pytest.raises(StabilityError):
            solve(rho0, YS, 0.1, 5.0, SchemeConfig(dt=dt, T=5.0, gamma=0.1))

    @pytest.mark.parametrize("n", [200, 400, 800])
    def test_dissipation_identity(self, n):
        # dG/dt = 2 int D rho^2
        rho0 = DensityField.exponential(Grid(20.0, n))
        tr = solve(rho0, YS, 0.1, 1.0, SchemeConfig(T=1.0, gamma=0.1, snapshot_every=1))
        j = tr.n_snapshots // 2
        rate = (tr.gini[j + 1] - tr.gini[j - 1]) / (tr.t[j + 1] - tr.t[j - 1])
        rho = tr.density(j)
        D = diffusion_coefficient(YS, rho, 0.1)
        pred = 2 * integrate(D * rho.values**2, rho.grid)
        assert abs(rate - pred) / pred < (1e-3 if n >= 400 else 2e-3)

    @pytest.mark.slow
    def test_grid_convergence(self):
        ref_grid = Grid(20.0, 3201)
        ref = solve(DensityField.exponential(ref_grid), YS, 0.1, 1.0, SchemeConfig(T=1.0, gamma=0.1, snapshot_every=10**6))
        errs = []
        for n in (201, 401, 801):
            g = Grid(20.0, n)
            tr = solve(DensityField.exponential(g), YS, 0.1, 1.0, SchemeConfig(T=1.0, gamma=0.1, snapshot_every=10**6))
            stride = (ref_grid.n_cells - 1) // (n - 1)
            diff = tr.snapshots[-1] - ref.snapshots[-1][::stride]
            errs.append(np.sqrt(integrate(diff**2, g)))
        ratios = [errs[0] / errs[1], errs[1] / errs[2]]
        assert all(2.5 <= r <= 5.0 for r in ratios)
        assert ratios[1] > ratios[0]
