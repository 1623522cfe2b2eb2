import numpy as np
import pytest

from sfcopula.copula import (
    FAMILIES,
    copula_cdf,
    copula_logpdf,
    copula_logpdf_grad,
    delta_from_eta,
)

PARAMETRIC = ("gaussian", "clayton", "gumbel")


def random_delta(family, rng, lo_dep=False):
    if family == "gaussian":
        return rng.uniform(-0.9, 0.9)
    if family == "clayton":
        return rng.uniform(0.1, 4.0)
    return rng.uniform(1.05, 4.0)  # gumbel


def mixed_partial(family, w1, w2, delta, h):
    def C(a, b):
        return copula_cdf(family, a, b, delta)

    return (C(w1 + h, w2 + h) - C(w1 + h, w2 - h) - C(w1 - h, w2 + h) + C(w1 - h, w2 - h)) / (
        4.0 * h * h
    )


def mixed_partial_richardson(family, w1, w2, delta, h):
    d1 = mixed_partial(family, w1, w2, delta, h)
    d2 = mixed_partial(family, w1, w2, delta, h / 2.0)
    return (4.0 * d2 - d1) / 3.0


class TestInverseLinks:
    def test_gaussian_at_zero(self):
        assert delta_from_eta("gaussian", 0.0) == 0.0

    def test_clayton_at_zero(self):
        assert delta_from_eta("clayton", 0.0) == 1.0

    def test_gumbel_at_zero(self):
        assert delta_from_eta("gumbel", 0.0) == 2.0

    def test_ranges(self):
        eta = np.linspace(-20, 20, 101)
        assert np.all(np.abs(delta_from_eta("gaussian", eta)) < 1.0)
        assert np.all(delta_from_eta("clayton", eta) > 0.0)
        assert np.all(delta_from_eta("gumbel", eta) >= 1.0)


class TestLogpdf:
    def test_independence_is_zero(self):
        rng = np.random.default_rng(0)
        w = rng.uniform(0.01, 0.99, size=(2, 50))
        np.testing.assert_array_equal(copula_logpdf("independence", w[0], w[1]), 0.0)

    def test_gaussian_vanishes_at_zero_delta(self):
        rng = np.random.default_rng(1)
        w = rng.uniform(0.01, 0.99, size=(2, 50))
        np.testing.assert_allclose(copula_logpdf("gaussian", w[0], w[1], 0.0), 0.0, atol=1e-14)

    def test_gumbel_vanishes_at_delta_one(self):
        rng = np.random.default_rng(2)
        w = rng.uniform(0.01, 0.99, size=(2, 50))
        np.testing.assert_allclose(copula_logpdf("gumbel", w[0], w[1], 1.0), 0.0, atol=1e-12)

    def test_clayton_center_fixture(self):
        # delta=2, w1=w2=0.5: c = 3 * 7^(-2.5) * 64; frozen from the
        # mixed-partial-of-CDF oracle
        got = copula_logpdf("clayton", 0.5, 0.5, 2.0)
        assert got == pytest.approx(np.log(3.0 * 7.0**-2.5 * 64.0), abs=1e-14)
        assert got == pytest.approx(0.3927199994, abs=1e-9)
        oracle = mixed_partial_richardson("clayton", 0.5, 0.5, 2.0, 1e-4)
        assert np.exp(got) == pytest.approx(oracle, rel=1e-7)

    def test_boundary_limits_reduce_to_independence(self):
        rng = np.random.default_rng(3)
        w = rng.uniform(0.05, 0.95, size=(2, 20))
        np.testing.assert_allclose(
            copula_logpdf("clayton", w[0], w[1], 1e-6), 0.0, atol=1e-4
        )
        np.testing.assert_allclose(
            copula_logpdf("gumbel", w[0], w[1], 1.0 + 1e-6), 0.0, atol=1e-4
        )

    def test_invalid_delta_rejected(self):
        with pytest.raises(ValueError):
            copula_logpdf("gaussian", 0.5, 0.5, 1.2)
        with pytest.raises(ValueError):
            copula_logpdf("clayton", 0.5, 0.5, -0.5)
        with pytest.raises(ValueError):
            copula_logpdf("gumbel", 0.5, 0.5, 0.8)
        with pytest.raises(ValueError):
            copula_logpdf("frank", 0.5, 0.5, 1.0)


class TestCdf:
    @pytest.mark.parametrize("family", PARAMETRIC)
    def test_uniform_margin_boundaries(self, family):
        rng = np.random.default_rng(4)
        for _ in range(10):
            d = random_delta(family, rng)
            w = rng.uniform(0.05, 0.95)
            assert copula_cdf(family, w, 1.0, d) == pytest.approx(w, abs=1e-9)
            assert copula_cdf(family, 1.0, w, d) == pytest.approx(w, abs=1e-9)
            assert copula_cdf(family, w, 0.0, d) == pytest.approx(0.0, abs=1e-12)

    def test_gumbel_center_fixture(self):
        got = copula_cdf("gumbel", 0.5, 0.5, 2.0)
        assert got == pytest.approx(np.exp(-np.sqrt(2.0) * np.log(2.0)), abs=1e-14)
        assert got == pytest.approx(0.3752142272, abs=1e-9)

    @pytest.mark.parametrize("family", PARAMETRIC)
    def test_mixed_partial_matches_density(self, family):
        rng = np.random.default_rng(11)
        n_pts = 100
        count = 0
        while count < n_pts:
            d = random_delta(family, rng)
            w1, w2 = rng.uniform(0.08, 0.92, size=2)
            dens = np.exp(copula_logpdf(family, w1, w2, d))
            h = 0.01 if family == "gaussian" else 1e-4
            oracle = mixed_partial_richardson(family, w1, w2, d, h)
            assert dens == pytest.approx(oracle, rel=1e-4), (family, w1, w2, d)
            count += 1


class TestNormalization:
    @pytest.mark.parametrize("family", PARAMETRIC)
    def test_density_integrates_to_one(self, family):
        # tensor Gauss-Legendre with an endpoint-clustering cosine map
        n = 400
        t, wt = np.polynomial.legendre.leggauss(n)
        t = 0.5 * (t + 1.0)
        wt = 0.5 * wt
        u = 0.5 * (1.0 - np.cos(np.pi * t))
        du = 0.5 * np.pi * np.sin(np.pi * t)
        wts = wt * du
        W1, W2 = np.meshgrid(u, u, indexing="ij")
        rng = np.random.default_rng(13)
        for _ in range(10):
            d = random_delta(family, rng)
            c = np.exp(copula_logpdf(family, W1, W2, d))
            total = wts @ c @ wts
            assert total == pytest.approx(1.0, abs=1e-4), (family, d)

    @pytest.mark.parametrize("family", PARAMETRIC)
    def test_uniform_margins(self, family):
        n = 2000
        t, wt = np.polynomial.legendre.leggauss(n)
        t = 0.5 * (t + 1.0)
        wt = 0.5 * wt
        u = 0.5 * (1.0 - np.cos(np.pi * t))
        wts = wt * 0.5 * np.pi * np.sin(np.pi * t)
        rng = np.random.default_rng(17)
        d = random_delta(family, rng)
        for w1 in (0.1, 0.3, 0.5, 0.7, 0.9):
            total = wts @ np.exp(copula_logpdf(family, w1, u, d))
            assert total == pytest.approx(1.0, abs=1e-5), (family, w1, d)


class TestGrad:
    def test_independence_grad_zero(self):
        g = copula_logpdf_grad("independence", 0.3, 0.7, 0.5)
        np.testing.assert_array_equal(g, np.zeros(3))

    def test_gaussian_symmetric_point(self):
        # at w1 = w2 = 0.5 both normal scores vanish, so the w-partials do too
        g = copula_logpdf_grad("gaussian", 0.5, 0.5, 0.8)
        assert g[0] == pytest.approx(0.0, abs=1e-12)
        assert g[1] == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("family", PARAMETRIC)
    def test_matches_finite_differences(self, family):
        rng = np.random.default_rng(19)
        for _ in range(300):
            w1, w2 = rng.uniform(0.02, 0.98, size=2)
            eta = rng.uniform(-1.5, 1.5)
            g = copula_logpdf_grad(family, w1, w2, eta)

            def at(a=w1, b=w2, e=eta):
                return copula_logpdf(family, a, b, delta_from_eta(family, e))

            h1 = 1e-6 * min(w1, 1 - w1, 0.5)
            h2 = 1e-6 * min(w2, 1 - w2, 0.5)
            fd = np.array(
                [
                    (at(a=w1 + h1) - at(a=w1 - h1)) / (2 * h1),
                    (at(b=w2 + h2) - at(b=w2 - h2)) / (2 * h2),
                    (at(e=eta + 1e-6) - at(e=eta - 1e-6)) / 2e-6,
                ]
            )
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_family_registry():
    assert FAMILIES == ("independence", "gaussian", "clayton", "gumbel")
