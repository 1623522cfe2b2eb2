"""Normal plus signed half-normal composed-error distribution.

The observable is y = mu + eps with eps = V + s*U, V ~ N(0, sigma_v^2) and
U half-normal with scale sigma_u (|N(0, sigma_u^2)|). Signs: s = -1 for a
production frontier, s = +1 for a cost frontier. Link scale throughout:
identity for mu, log for both scales, so gradients are reported with respect
to (mu, log sigma_v, log sigma_u).

Closed forms: with sigma^2 = sigma_v^2 + sigma_u^2, lam = sigma_u/sigma_v and
z = (y - mu)/sigma,

    pdf  f(y) = (2/sigma) phi(z) Phi(s*lam*z)
    cdf  F(y) = Phi(z) - 2 T(z, s*lam)        (T = Owen's T)

which is the skew-normal with shape s*lam. The conditional-inefficiency
predictors use the truncated normal U | eps with

    mu_star = s*eps*sigma_u^2/sigma^2,  sigma_star^2 = sigma_u^2 sigma_v^2/sigma^2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MarginParams:
    """Distribution parameters of one composed-error margin.

    Fields may be scalars or arrays of a common broadcast shape; ``s`` is a
    scalar sign, -1 (production) or +1 (cost).
    """

    mu: np.ndarray | float
    sigma_v: np.ndarray | float
    sigma_u: np.ndarray | float
    s: int = -1

    def __post_init__(self):
        if self.s not in (-1, 1):
            raise ValueError("s must be -1 (production) or +1 (cost)")
        if np.any(np.asarray(self.sigma_v) <= 0) or np.any(np.asarray(self.sigma_u) <= 0):
            raise ValueError("scale parameters must be strictly positive")


def owen_t(h, a):
    """Owen's T function T(h, a)."""
    return special.owens_t(h, a)


def _log_phi(z):
    return -0.5 * z * z - 0.5 * _LOG_2PI


def _mills(t):
    """phi(t)/Phi(t), stable for very negative t."""
    t = np.asarray(t, dtype=float)
    out = np.exp(_log_phi(t) - special.log_ndtr(t))
    far = t < -1e6
    if np.any(far):
        out = np.where(far, -t - 1.0 / t, out)
    return out


def composed_logpdf(y, p: MarginParams):
    """Log-density of the composed error margin at y."""
    e = np.asarray(y, dtype=float) - p.mu
    s2 = p.sigma_v**2 + p.sigma_u**2
    sig = np.sqrt(s2)
    z = e / sig
    t = p.s * (p.sigma_u / p.sigma_v) * z
    return np.log(2.0) - 0.5 * np.log(s2) + _log_phi(z) + special.log_ndtr(t)


def composed_cdf(y, p: MarginParams):
    """Distribution function of the composed error margin at y."""
    e = np.asarray(y, dtype=float) - p.mu
    sig = np.sqrt(p.sigma_v**2 + p.sigma_u**2)
    z = e / sig
    a = p.s * p.sigma_u / p.sigma_v
    F = special.ndtr(z) - 2.0 * special.owens_t(z, a)
    return np.clip(F, 0.0, 1.0)


def logpdf_grad(y, p: MarginParams):
    """Partials of composed_logpdf wrt (mu, log sigma_v, log sigma_u).

    Returns an array with a trailing axis of length 3.
    """
    e = np.asarray(y, dtype=float) - p.mu
    sv, su = p.sigma_v, p.sigma_u
    s2 = sv**2 + su**2
    sig = np.sqrt(s2)
    z = e / sig
    t = p.s * (su / sv) * z
    M = _mills(t)
    d_mu = z / sig - M * p.s * su / (sv * sig)
    d_lsv = (-(sv**2) + z * z * sv**2) / s2 - M * p.s * e * su * (s2 + sv**2) / (sig**3 * sv)
    d_lsu = (-(su**2) + z * z * su**2) / s2 + M * p.s * e * sv * su / sig**3
    return np.stack(np.broadcast_arrays(d_mu, d_lsv, d_lsu), axis=-1)


def cdf_grad(y, p: MarginParams):
    """Partials of composed_cdf wrt (mu, log sigma_v, log sigma_u)."""
    e = np.asarray(y, dtype=float) - p.mu
    sv, su = p.sigma_v, p.sigma_u
    s2 = sv**2 + su**2
    sig = np.sqrt(s2)
    z = e / sig
    a = p.s * su / sv
    # dF/dz = 2 phi(z) Phi(a z); dF/da = -exp(-z^2 (1+a^2)/2) / (pi (1+a^2))
    dF_dz = 2.0 * np.exp(_log_phi(z) + special.log_ndtr(a * z))
    dF_da = -np.exp(-0.5 * z * z * (1.0 + a * a)) / (np.pi * (1.0 + a * a))
    d_mu = -dF_dz / sig
    d_lsv = dF_dz * (-e * sv**2 / sig**3) + dF_da * (-a)
    d_lsu = dF_dz * (-e * su**2 / sig**3) + dF_da * a
    return np.stack(np.broadcast_arrays(d_mu, d_lsv, d_lsu), axis=-1)


def _truncnorm_moments(y, p: MarginParams):
    e = np.asarray(y, dtype=float) - p.mu
    s2 = p.sigma_v**2 + p.sigma_u**2
    mu_star = p.s * e * p.sigma_u**2 / s2
    sig_star = p.sigma_u * p.sigma_v / np.sqrt(s2)
    return mu_star, sig_star


def efficiency_jlms(y, p: MarginParams):
    """Conditional mean inefficiency E[U | eps] (Jondrow-type predictor)."""
    mu_star, sig_star = _truncnorm_moments(y, p)
    t = mu_star / sig_star
    m = t + _mills(t)
    far = t < -1e4
    if np.any(far):
        m = np.where(far, -1.0 / t + 2.0 / t**3, m)
    return sig_star * m


def efficiency_bc(y, p: MarginParams):
    """Conditional mean efficiency E[exp(-U) | eps] (Battese-Coelli-type)."""
    mu_star, sig_star = _truncnorm_moments(y, p)
    t = mu_star / sig_star
    log_eff = (
        -mu_star
        + 0.5 * sig_star**2
        + special.log_ndtr(t - sig_star)
        - special.log_ndtr(t)
    )
    return np.exp(log_eff)
