import numpy as np
import pytest
from scipy import integrate, stats

from sfcopula.margins import (
    MarginParams,
    cdf_grad,
    composed_cdf,
    composed_logpdf,
    efficiency_bc,
    efficiency_jlms,
    logpdf_grad,
    owen_t,
)


def convolution_pdf(e, sv, su, s):
    """Density of V + s*U by quadrature (oracle)."""
    val, _ = integrate.quad(
        lambda u: stats.norm.pdf(e - s * u, scale=sv) * stats.halfnorm.pdf(u, scale=su),
        0.0,
        np.inf,
        epsabs=1e-13,
        epsrel=1e-12,
    )
    return val


def conditional_u_moment(e, sv, su, s, g):
    """E[g(U) | eps = e] by quadrature (oracle).

    The conditional density can be a narrow spike well inside (0, inf), so
    integrate a finite interval with a scanned peak location as a hint.
    """
    w = lambda u: stats.norm.pdf(e - s * u, scale=sv) * stats.halfnorm.pdf(u, scale=su)
    hi = abs(e) + 12.0 * (sv + su) + 1.0
    scan = np.linspace(0.0, hi, 4001)
    peak = float(scan[np.argmax(w(scan))])
    scale = w(peak)  # integrand can sit near 1e-17; work on a rescaled copy
    num, _ = integrate.quad(
        lambda u: g(u) * w(u) / scale, 0.0, hi, points=[peak], limit=300, epsabs=0.0, epsrel=1e-11
    )
    den, _ = integrate.quad(
        lambda u: w(u) / scale, 0.0, hi, points=[peak], limit=300, epsabs=0.0, epsrel=1e-11
    )
    return num / den


def random_params(rng):
    return MarginParams(
        mu=rng.normal(scale=2.0),
        sigma_v=np.exp(rng.uniform(-1.5, 1.0)),
        sigma_u=np.exp(rng.uniform(-1.5, 1.0)),
        s=int(rng.choice([-1, 1])),
    )


class TestOwenT:
    def test_zero_a(self):
        h = np.linspace(-6, 6, 100)
        np.testing.assert_allclose(owen_t(h, 0.0), 0.0, atol=1e-15)

    def test_zero_h(self):
        a = np.linspace(-8, 8, 100)
        np.testing.assert_allclose(owen_t(0.0, a), np.arctan(a) / (2 * np.pi), atol=1e-12)

    def test_a_one(self):
        h = np.linspace(-6, 6, 100)
        Phi = stats.norm.cdf(h)
        np.testing.assert_allclose(owen_t(h, 1.0), 0.5 * Phi * (1 - Phi), atol=1e-12)


class TestComposedLogpdf:
    def test_fixture_symmetric_point(self):
        p = MarginParams(mu=0.0, sigma_v=1.0, sigma_u=1.0, s=-1)
        # sqrt(2)*phi(0)*Phi(0), frozen from the quadrature oracle
        assert composed_logpdf(0.0, p) == pytest.approx(-1.2655121234846454, abs=1e-12)
        assert np.exp(composed_logpdf(0.0, p)) == pytest.approx(0.2820947917738781, abs=1e-12)

    def test_matches_convolution(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            p = random_params(rng)
            y = p.mu + rng.normal(scale=2.0)
            oracle = convolution_pdf(y - p.mu, p.sigma_v, p.sigma_u, p.s)
            assert np.exp(composed_logpdf(y, p)) == pytest.approx(oracle, abs=1e-9)

    def test_normal_limit(self):
        p = MarginParams(mu=0.5, sigma_v=0.8, sigma_u=1e-9, s=-1)
        y = np.array([-1.0, 0.2, 1.7])
        expected = stats.norm.logpdf(y, loc=0.5, scale=0.8)
        np.testing.assert_allclose(composed_logpdf(y, p), expected, atol=1e-7)

    def test_sign_symmetry(self):
        pm = MarginParams(mu=0.0, sigma_v=0.7, sigma_u=1.3, s=-1)
        pp = MarginParams(mu=0.0, sigma_v=0.7, sigma_u=1.3, s=1)
        e = np.linspace(-4, 4, 31)
        np.testing.assert_allclose(composed_logpdf(e, pm), composed_logpdf(-e, pp), atol=1e-13)

    def test_integrates_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = random_params(rng)
            total, _ = integrate.quad(
                lambda y: np.exp(composed_logpdf(y, p)),
                -np.inf,
                np.inf,
                epsabs=1e-10,
                limit=200,
            )
            assert total == pytest.approx(1.0, abs=1e-8)

    def test_no_underflow_in_tail(self):
        p = MarginParams(mu=0.0, sigma_v=1.0, sigma_u=1.0, s=-1)
        val = composed_logpdf(60.0, p)  # skew term deep in the tail
        assert np.isfinite(val)


class TestComposedCdf:
    def test_fixture(self):
        p = MarginParams(mu=0.0, sigma_v=1.0, sigma_u=1.0, s=-1)
        assert composed_cdf(0.0, p) == pytest.approx(0.75, abs=1e-12)

    def test_limits(self):
        p = MarginParams(mu=1.0, sigma_v=0.5, sigma_u=2.0, s=1)
        assert composed_cdf(80.0, p) == pytest.approx(1.0, abs=1e-12)
        assert composed_cdf(-80.0, p) == pytest.approx(0.0, abs=1e-12)

    def test_normal_limit(self):
        p = MarginParams(mu=0.0, sigma_v=1.2, sigma_u=1e-10, s=-1)
        y = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(composed_cdf(y, p), stats.norm.cdf(y / 1.2), atol=1e-9)

    def test_matches_pdf_quadrature(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            p = random_params(rng)
            y = p.mu + rng.normal(scale=1.5)
            oracle, _ = integrate.quad(
                lambda t: np.exp(composed_logpdf(t, p)), -np.inf, y, epsabs=1e-11, limit=200
            )
            assert composed_cdf(y, p) == pytest.approx(oracle, abs=1e-8)

    def test_strictly_increasing(self):
        p = MarginParams(mu=0.3, sigma_v=0.6, sigma_u=1.1, s=-1)
        sig = np.hypot(0.6, 1.1)
        # strict on the representable range; in the thin (skewed-away) tail
        # the density decays like exp(-z^2 (1+lam^2)/2) and CDF increments
        # fall below double resolution around F = 1
        y = np.linspace(0.3 - 4.5 * sig, 0.3 + 3.0 * sig, 400)
        F = composed_cdf(y, p)
        assert np.all(np.diff(F) > 0)
        wide = composed_cdf(np.linspace(-8, 8, 200), p)
        assert np.all(np.diff(wide) >= 0)

    def test_numeric_derivative_matches_pdf(self):
        rng = np.random.default_rng(9)
        h = 1e-5
        for _ in range(50):
            p = random_params(rng)
            y = p.mu + rng.normal(scale=1.5)
            num = (composed_cdf(y + h, p) - composed_cdf(y - h, p)) / (2 * h)
            assert num == pytest.approx(np.exp(composed_logpdf(y, p)), rel=1e-6)


def richardson_fd(f, x, h):
    """Central difference with one Richardson extrapolation step."""
    d1 = (f(x + h) - f(x - h)) / (2 * h)
    d2 = (f(x + h / 2) - f(x - h / 2)) / h
    return (4 * d2 - d1) / 3


class TestLogpdfGrad:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            p = random_params(rng)
            y = p.mu + rng.normal(scale=2.0)
            g = logpdf_grad(y, p)
            lsv, lsu = np.log(p.sigma_v), np.log(p.sigma_u)

            def at(mu=p.mu, a=lsv, b=lsu):
                return composed_logpdf(y, MarginParams(mu, np.exp(a), np.exp(b), p.s))

            fd = np.array(
                [
                    richardson_fd(lambda v: at(mu=v), p.mu, 1e-5),
                    richardson_fd(lambda v: at(a=v), lsv, 1e-5),
                    richardson_fd(lambda v: at(b=v), lsu, 1e-5),
                ]
            )
            np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)

    def test_zero_mu_gradient_at_mode(self):
        from scipy.optimize import minimize_scalar

        p = MarginParams(mu=0.0, sigma_v=0.8, sigma_u=1.4, s=-1)
        res = minimize_scalar(
            lambda y: -composed_logpdf(y, p), bounds=(-5, 5), method="bounded",
            options={"xatol": 1e-12},
        )
        assert abs(logpdf_grad(res.x, p)[0]) < 1e-5

    def test_normal_score_limit(self):
        p = MarginParams(mu=0.0, sigma_v=0.9, sigma_u=1e-9, s=1)
        y = 1.3
        assert logpdf_grad(y, p)[0] == pytest.approx(y / 0.9**2, rel=1e-6)


class TestCdfGrad:
    def test_mu_partial_is_minus_pdf(self):
        rng = np.random.default_rng(23)
        for _ in range(200):
            p = random_params(rng)
            y = p.mu + rng.normal(scale=2.0)
            assert cdf_grad(y, p)[0] == pytest.approx(-np.exp(composed_logpdf(y, p)), rel=1e-8)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(29)
        for _ in range(200):
            p = random_params(rng)
            y = p.mu + rng.normal(scale=1.5)
            g = cdf_grad(y, p)
            lsv, lsu = np.log(p.sigma_v), np.log(p.sigma_u)

            def at(mu=p.mu, a=lsv, b=lsu):
                return composed_cdf(y, MarginParams(mu, np.exp(a), np.exp(b), p.s))

            fd = np.array(
                [
                    richardson_fd(lambda v: at(mu=v), p.mu, 1e-5),
                    richardson_fd(lambda v: at(a=v), lsv, 1e-5),
                    richardson_fd(lambda v: at(b=v), lsu, 1e-5),
                ]
            )
            np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)

    def test_flat_tails(self):
        p = MarginParams(mu=0.0, sigma_v=1.0, sigma_u=0.8, s=-1)
        for y in (-60.0, 60.0):
            np.testing.assert_allclose(cdf_grad(y, p), 0.0, atol=1e-12)


class TestEfficiency:
    def test_jlms_fixture(self):
        p = MarginParams(mu=0.0, sigma_v=1.0, sigma_u=1.0, s=-1)
        # frozen from the conditional-moment quadrature oracle
        assert efficiency_jlms(0.0, p) == pytest.approx(0.5641895835477563, abs=1e-10)

    def test_jlms_matches_quadrature(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            p = random_params(rng)
            y = p.mu + rng.normal(scale=1.5)
            oracle = conditional_u_moment(y - p.mu, p.sigma_v, p.sigma_u, p.s, lambda u: u)
            assert efficiency_jlms(y, p) == pytest.approx(oracle, rel=1e-6)

    def test_bc_matches_quadrature(self):
        rng = np.random.default_rng(37)
        for _ in range(100):
            p = random_params(rng)
            y = p.mu + rng.normal(scale=1.5)
            oracle = conditional_u_moment(y - p.mu, p.sigma_v, p.sigma_u, p.s, lambda u: np.exp(-u))
            assert efficiency_bc(y, p) == pytest.approx(oracle, rel=1e-6)

    def test_vanishing_inefficiency(self):
        p = MarginParams(mu=0.0, sigma_v=1.0, sigma_u=1e-9, s=-1)
        assert efficiency_jlms(0.7, p) == pytest.approx(0.0, abs=1e-8)
        assert efficiency_bc(0.7, p) == pytest.approx(1.0, abs=1e-8)

    def test_ranges(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            p = random_params(rng)
            y = p.mu + rng.normal(scale=3.0)
            assert efficiency_jlms(y, p) > 0
            assert 0.0 < efficiency_bc(y, p) < 1.0

    def test_extreme_composed_errors(self):
        # |eps/sigma| up to 6 must stay finite and match the oracle
        p = MarginParams(mu=0.0, sigma_v=1.0, sigma_u=1.0, s=-1)
        sig = np.sqrt(2.0)
        for z in (-6.0, -4.0, 4.0, 6.0):
            e = z * sig
            j = efficiency_jlms(e, p)
            b = efficiency_bc(e, p)
            assert np.isfinite(j) and np.isfinite(b)
            assert j == pytest.approx(
                conditional_u_moment(e, 1.0, 1.0, -1, lambda u: u), rel=1e-6
            )
            assert b == pytest.approx(
                conditional_u_moment(e, 1.0, 1.0, -1, lambda u: np.exp(-u)), rel=1e-6
            )


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        MarginParams(mu=0.0, sigma_v=-1.0, sigma_u=1.0, s=-1)
    with pytest.raises(ValueError):
        MarginParams(mu=0.0, sigma_v=1.0, sigma_u=1.0, s=2)
