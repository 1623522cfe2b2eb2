"""Bivariate copula families: independence, gaussian, clayton, gumbel.

Families are selected by name. Each provides an inverse link eta -> delta
into its parameter space, the log-density, analytic partials with respect to
(w1, w2, eta_delta), and the distribution function (used as a testing
oracle). Parameter spaces: gaussian delta in (-1, 1), clayton delta > 0,
gumbel delta >= 1; the independence copula has no parameter.
"""
from __future__ import annotations

import numpy as np
from scipy import integrate, special

FAMILIES = ("independence", "gaussian", "clayton", "gumbel")

# distance kept from parameter-space boundaries during optimization
_BOUNDARY_EPS = 1e-7


def _check_family(family: str):
    if family not in FAMILIES:
        raise ValueError(f"unknown copula family {family!r}; choose from {FAMILIES}")


def has_parameter(family: str) -> bool:
    _check_family(family)
    return family != "independence"


def delta_from_eta(family: str, eta):
    """Map a predictor value into the family's parameter space."""
    _check_family(family)
    eta = np.asarray(eta, dtype=float)
    if family == "gaussian":
        return eta / np.sqrt(1.0 + eta * eta)
    if family == "clayton":
        return np.exp(eta)
    if family == "gumbel":
        return np.exp(eta) + 1.0
    raise ValueError("independence copula has no parameter")


def delta_link_jacobian(family: str, eta):
    """d delta / d eta for the family's inverse link."""
    _check_family(family)
    eta = np.asarray(eta, dtype=float)
    if family == "gaussian":
        return (1.0 + eta * eta) ** -1.5
    if family == "clayton":
        return np.exp(eta)
    if family == "gumbel":
        return np.exp(eta)
    raise ValueError("independence copula has no parameter")


def clamp_delta(family: str, delta):
    """Pull delta strictly inside the parameter space (keeps the likelihood
    finite during optimization)."""
    _check_family(family)
    delta = np.asarray(delta, dtype=float)
    if family == "gaussian":
        return np.clip(delta, -1.0 + _BOUNDARY_EPS, 1.0 - _BOUNDARY_EPS)
    if family == "clayton":
        return np.maximum(delta, _BOUNDARY_EPS)
    if family == "gumbel":
        return np.maximum(delta, 1.0 + _BOUNDARY_EPS)
    return delta


def _validate_delta(family: str, delta):
    delta = np.asarray(delta, dtype=float)
    if family == "gaussian" and np.any(np.abs(delta) >= 1.0):
        raise ValueError("gaussian copula requires |delta| < 1")
    if family == "clayton" and np.any(delta <= 0.0):
        raise ValueError("clayton copula requires delta > 0")
    if family == "gumbel" and np.any(delta < 1.0):
        raise ValueError("gumbel copula requires delta >= 1")
    return delta


def copula_logpdf(family: str, w1, w2, delta=None):
    """Log copula density at interior points (w1, w2)."""
    _check_family(family)
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if family == "independence":
        return np.zeros(np.broadcast_shapes(w1.shape, w2.shape))
    delta = _validate_delta(family, delta)
    if family == "gaussian":
        z1 = special.ndtri(w1)
        z2 = special.ndtri(w2)
        om = 1.0 - delta * delta
        return (
            -0.5 * np.log(om)
            + delta / om * z1 * z2
            - 0.5 * delta * delta / om * (z1 * z1 + z2 * z2)
        )
    if family == "clayton":
        S = w1 ** (-delta) + w2 ** (-delta) - 1.0
        return (
            np.log1p(delta)
            - (1.0 / delta + 2.0) * np.log(S)
            - (delta + 1.0) * (np.log(w1) + np.log(w2))
        )
    # gumbel: density of C = exp(-((-log w1)^d + (-log w2)^d)^(1/d))
    u = -np.log(w1)
    v = -np.log(w2)
    B = u**delta + v**delta
    A = B ** (1.0 / delta)
    return (
        -A
        + (u + v)
        + (delta - 1.0) * (np.log(u) + np.log(v))
        + (1.0 / delta - 2.0) * np.log(B)
        + np.log(A + delta - 1.0)
    )


def _dlogc_interior(family: str, w1, w2, delta):
    """Partials of the log density wrt (w1, w2, delta)."""
    if family == "gaussian":
        z1 = special.ndtri(w1)
        z2 = special.ndtri(w2)
        om = 1.0 - delta * delta
        dz1 = (delta * z2 - delta * delta * z1) / om
        dz2 = (delta * z1 - delta * delta * z2) / om
        d_w1 = dz1 / np.exp(_log_phi(z1))
        d_w2 = dz2 / np.exp(_log_phi(z2))
        d_delta = (
            delta / om
            + (1.0 + delta * delta) / om**2 * z1 * z2
            - delta / om**2 * (z1 * z1 + z2 * z2)
        )
        return d_w1, d_w2, d_delta
    if family == "clayton":
        lw1, lw2 = np.log(w1), np.log(w2)
        a1 = w1 ** (-delta)
        a2 = w2 ** (-delta)
        S = a1 + a2 - 1.0
        d_w1 = (1.0 + 2.0 * delta) * a1 / (w1 * S) - (delta + 1.0) / w1
        d_w2 = (1.0 + 2.0 * delta) * a2 / (w2 * S) - (delta + 1.0) / w2
        dS = -(a1 * lw1 + a2 * lw2)
        d_delta = (
            1.0 / (1.0 + delta)
            + np.log(S) / delta**2
            - (1.0 / delta + 2.0) * dS / S
            - (lw1 + lw2)
        )
        return d_w1, d_w2, d_delta
    # gumbel
    u = -np.log(w1)
    v = -np.log(w2)
    B = u**delta + v**delta
    logB = np.log(B)
    A = B ** (1.0 / delta)
    Au = A * u ** (delta - 1.0) / B
    Av = A * v ** (delta - 1.0) / B
    d_u = -Au + 1.0 + (delta - 1.0) / u + (1.0 / delta - 2.0) * delta * u ** (delta - 1.0) / B + Au / (A + delta - 1.0)
    d_v = -Av + 1.0 + (delta - 1.0) / v + (1.0 / delta - 2.0) * delta * v ** (delta - 1.0) / B + Av / (A + delta - 1.0)
    Bd = u**delta * np.log(u) + v**delta * np.log(v)
    Ad = A * (-logB / delta**2 + Bd / (delta * B))
    d_delta = (
        -Ad
        + np.log(u)
        + np.log(v)
        - logB / delta**2
        + (1.0 / delta - 2.0) * Bd / B
        + (Ad + 1.0) / (A + delta - 1.0)
    )
    return d_u * (-1.0 / w1), d_v * (-1.0 / w2), d_delta


def _log_phi(z):
    return -0.5 * z * z - 0.5 * np.log(2.0 * np.pi)


def copula_logpdf_grad(family: str, w1, w2, delta_eta):
    """Partials of the log density wrt (w1, w2, eta_delta).

    The third component includes the inverse-link Jacobian; it is zero
    wherever the boundary clamp on delta is active. Returns an array with a
    trailing axis of length 3.
    """
    _check_family(family)
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if family == "independence":
        shape = np.broadcast_shapes(w1.shape, w2.shape, np.shape(delta_eta))
        return np.zeros(shape + (3,))
    eta = np.asarray(delta_eta, dtype=float)
    raw = delta_from_eta(family, eta)
    delta = clamp_delta(family, raw)
    active = raw != delta
    d_w1, d_w2, d_delta = _dlogc_interior(family, w1, w2, delta)
    jac = np.where(active, 0.0, delta_link_jacobian(family, eta))
    return np.stack(np.broadcast_arrays(d_w1, d_w2, d_delta * jac), axis=-1)


def _bvn_cdf(a: float, b: float, rho: float) -> float:
    """P(Z1 <= a, Z2 <= b) for standard bivariate normal, by quadrature."""
    if rho == 0.0:
        return float(special.ndtr(a) * special.ndtr(b))
    srt = np.sqrt(1.0 - rho * rho)

    def f(z):
        return np.exp(_log_phi(z)) * special.ndtr((b - rho * z) / srt)

    val, _ = integrate.quad(f, -40.0, a, epsabs=1e-13, epsrel=1e-12, limit=500)
    return float(val)


def copula_cdf(family: str, w1, w2, delta=None):
    """Joint distribution function of the copula (testing oracle)."""
    _check_family(family)
    w1a = np.asarray(w1, dtype=float)
    w2a = np.asarray(w2, dtype=float)
    if family == "independence":
        return w1a * w2a
    delta = _validate_delta(family, delta)
    if family == "gaussian":
        scalars = np.broadcast_arrays(w1a, w2a, delta)
        out = np.empty(scalars[0].shape)
        it = np.nditer(scalars[0], flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            u, v, d = (float(s[i]) for s in scalars)
            if u <= 0.0 or v <= 0.0:
                out[i] = 0.0
            elif u >= 1.0:
                out[i] = v
            elif v >= 1.0:
                out[i] = u
            else:
                out[i] = _bvn_cdf(special.ndtri(u), special.ndtri(v), d)
        return out if out.shape else float(out)
    if family == "clayton":
        with np.errstate(divide="ignore", over="ignore"):
            inner = np.maximum(w1a ** (-delta) + w2a ** (-delta) - 1.0, 0.0)
            out = np.where(inner > 0.0, inner ** (-1.0 / delta), 0.0)
        return np.where((w1a <= 0.0) | (w2a <= 0.0), 0.0, out)
    # gumbel
    with np.errstate(divide="ignore", over="ignore"):
        u = -np.log(w1a)
        v = -np.log(w2a)
        out = np.exp(-((u**delta + v**delta) ** (1.0 / delta)))
    return np.where((w1a <= 0.0) | (w2a <= 0.0), 0.0, out)
