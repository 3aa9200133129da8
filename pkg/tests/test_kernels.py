from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ginigrad.grid import DensityField, Grid, integrate
from ginigrad.kernels import (
    TransactionKernel,
    diffusion_coefficient,
    get_kernel,
    kernel_integral,
    uniform_exchange_kernel,
    validate_kernel,
    yard_sale_kernel,
)

wealth = st.floats(0.0, 100.0)


class TestYardSale:
    @pytest.mark.parametrize("x,y,expected", [(1, 2, 1), (0, 5, 0), (3, 3, 9), (2, 1, 1)])
    def test_phi(self, x, y, expected):
        assert yard_sale_kernel().phi(x, y) == expected

    @given(wealth, wealth)
    def test_symmetric(self, x, y):
        k = yard_sale_kernel()
        assert k.phi(x, y) == k.phi(y, x)

    def test_sampler_is_plus_minus_min(self, rng):
        s = yard_sale_kernel().sample(np.full(1000, 2.0), np.full(1000, 0.5), rng)
        assert set(np.unique(s)) == {-0.5, 0.5}

    def test_validation_passes(self):
        rep = validate_kernel(yard_sale_kernel(), 10**6, np.random.default_rng(1))
        assert rep.passed, rep.checks
        assert rep.check("symmetry").value == 0.0
        assert rep.check("support_violations").value == 0

    def test_uniform_kernel_validates(self):
        assert validate_kernel(uniform_exchange_kernel(), 10**5, np.random.default_rng(2)).passed


class TestValidationCatchesDefects:
    def test_wrong_phi(self, rng):
        k = TransactionKernel("bad-phi", lambda x, y: np.asarray(x) * np.asarray(y),
                              yard_sale_kernel().sample)
        rep = validate_kernel(k, 10**4, rng)
        assert not rep.check("second_moment_rel").passed
        assert rep.check("unbiased_z").passed

    def test_biased_sampler(self, rng):
        def plus_one(x, y, rng):
            return np.ones(np.broadcast(x, y).shape)

        k = TransactionKernel("biased", yard_sale_kernel().phi, plus_one)
        rep = validate_kernel(k, 10**4, rng)
        assert not rep.check("unbiased_z").passed
        assert not rep.check("support_violations").passed
        assert not rep.passed

    def test_asymmetric_phi(self, rng):
        k = TransactionKernel("asym", lambda x, y: np.minimum(x, y) ** 2 + 0.1 * np.asarray(x),
                              yard_sale_kernel().sample)
        assert not validate_kernel(k, 10**4, rng).check("symmetry").passed

    def test_too_few_samples(self, rng):
        with pytest.raises(ValueError):
            validate_kernel(yard_sale_kernel(), 100, rng)


def test_get_kernel():
    assert get_kernel("yard-sale").name == "yard-sale"
    with pytest.raises(ValueError, match="unknown kernel"):
        get_kernel("nope")


class TestDiffusionCoefficient:
    def test_uniform_density_at_one(self):
        g = Grid(2.0, 401)
        rho = DensityField.uniform(g, 0.0, 2.0)
        D = diffusion_coefficient(yard_sale_kernel(), rho, 0.999999)
        i = 200
        assert g.nodes[i] == pytest.approx(1.0)
        # 1/4 (2 w^2 - 2 w^3 / 3) at w = 1, scaled by gamma
        assert D[i] / 0.999999 == pytest.approx(1.0 / 3.0, abs=1e-4)

    def test_uniform_density_whole_profile(self):
        g = Grid(2.0, 401)
        rho = DensityField.uniform(g, 0.0, 2.0)
        w = g.nodes
        D = diffusion_coefficient(yard_sale_kernel(), rho, 0.5)
        exact = 0.5 * 0.25 * (2 * w**2 - 2 * w**3 / 3)
        assert np.max(np.abs(D - exact)) < 1e-4

    def test_narrow_bump(self):
        errs = []
        for width in (0.1, 0.03, 0.01):
            g = Grid(20.0, 4001)
            rho = DensityField.bump(g, 1.0, width, normalize=False)
            D = diffusion_coefficient(yard_sale_kernel(), rho, 0.5)
            exact = 0.5 * 0.5 * np.minimum(g.nodes, 1.0) ** 2
            errs.append(np.max(np.abs(D - exact)))
        assert errs[0] > errs[1] > errs[2]
        # error is O(width)
        assert errs[2] < 0.25 * errs[0]
        assert errs[2] < 3e-3

    def test_zero_density(self):
        g = Grid(5.0, 51)
        np.testing.assert_array_equal(
            diffusion_coefficient(yard_sale_kernel(), DensityField(g, np.zeros(51)), 0.1), 0.0
        )

    @pytest.mark.parametrize("gamma", [0.0, 1.0, 1.5, -0.1])
    def test_gamma_range(self, gamma):
        with pytest.raises(ValueError, match="gamma"):
            diffusion_coefficient(yard_sale_kernel(), DensityField.exponential(Grid(5.0, 11)), gamma)

    def test_negative_density(self):
        rho = DensityField(Grid(1.0, 3), np.array([0.0, -1.0, 0.0]), check=False)
        with pytest.raises(ValueError):
            diffusion_coefficient(yard_sale_kernel(), rho, 0.1)

    def test_cache_and_direct_agree(self):
        rho = DensityField.exponential(Grid(20.0, 300))
        a = diffusion_coefficient(yard_sale_kernel(), rho, 0.1, use_cache=True)
        b = diffusion_coefficient(yard_sale_kernel(), rho, 0.1, use_cache=False)
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-16)

    def test_direct_quadrature_oracle(self):
        g = Grid(20.0, 101)
        rho = DensityField.exponential(g)
        w = g.nodes
        D = diffusion_coefficient(yard_sale_kernel(), rho, 0.2)
        for i in (0, 10, 50, 100):
            ref = 0.1 * integrate(np.minimum(w[i], w) ** 2 * rho.values, g)
            assert D[i] == pytest.approx(ref, rel=1e-13, abs=1e-16)

    @given(st.integers(0, 2**32 - 1))
    def test_nonnegative_monotone_linear(self, seed):
        r = np.random.default_rng(seed)
        g = Grid(10.0, 64)
        a = DensityField(g, r.random(64))
        b = DensityField(g, r.random(64) * r.random(64))
        k = yard_sale_kernel()
        Da = diffusion_coefficient(k, a, 0.3)
        Db = diffusion_coefficient(k, b, 0.3)
        assert np.all(Da >= 0) and Da[0] == 0
        assert np.all(np.diff(Da) >= -1e-14)
        s, t = r.uniform(0, 3, 2)
        Dab = diffusion_coefficient(k, a.with_values(s * a.values + t * b.values), 0.3)
        np.testing.assert_allclose(Dab, s * Da + t * Db, rtol=1e-12, atol=1e-14)

    def test_kernel_integral_signed(self):
        g = Grid(4.0, 41)
        f = np.sin(g.nodes)
        out = kernel_integral(yard_sale_kernel(), f, g)
        ref = [integrate(np.minimum(x, g.nodes) ** 2 * f, g) for x in g.nodes]
        np.testing.assert_allclose(out, ref, atol=1e-12)
