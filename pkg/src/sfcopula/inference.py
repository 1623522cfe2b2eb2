"""Effective degrees of freedom, GAIC, and posterior credible intervals."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._linalg import chol_precision_sampler
from .model import PanelData, StackedModel


@dataclass
class ConvergenceReport:
    converged: bool
    outer_iterations: int
    inner_iterations: int
    rejected_steps: int
    grad_inf_norm: float
    message: str = ""


@dataclass
class FitResult:
    """Estimated model: coefficients, smoothing parameters, diagnostics."""

    model: StackedModel
    gamma_hat: np.ndarray
    lambda_hat: np.ndarray
    H_pen: np.ndarray  # penalized Hessian of the log-likelihood at gamma_hat
    loglik: float
    loglik_penalized: float
    edf_by_parameter: dict
    edf_by_term: dict
    edf_total: float
    gaic: float
    lambda_criterion: float
    convergence: ConvergenceReport

    @property
    def spec(self):
        return self.model.spec


def edf(model: StackedModel, gamma=None, lam=None):
    """Per-parameter and per-term effective degrees of freedom.

    Evaluates trace(Z (Z'Z + D)^-1 Z') per distribution parameter with the
    centered training designs and the lambda-weighted penalties; returns
    (per_parameter, per_term, total). Shape-constrained blocks enter through
    their coefficient Jacobian at gamma.
    """
    gamma = model.gamma if gamma is None else np.asarray(gamma, dtype=float)
    lam = model.lam if lam is None else np.asarray(lam, dtype=float)
    per_parameter = {}
    per_term = {}
    for pd in model.predictors:
        J = pd.jacobian(gamma[pd.sl])
        XtX = J.T @ J
        Dloc = np.zeros_like(XtX)
        for lj, pb in zip(lam, model.penalties):
            if pb.parameter == pd.name:
                lo = pb.sl.start - pd.offset
                hi = pb.sl.stop - pd.offset
                Dloc[lo:hi, lo:hi] += lj * pb.D
        A = XtX + Dloc
        try:
            shares = np.diag(np.linalg.solve(A, XtX))
        except np.linalg.LinAlgError:
            warnings.warn(
                f"rank-deficient influence system for {pd.name}; using pseudo-inverse"
            )
            shares = np.diag(np.linalg.pinv(A) @ XtX)
        per_parameter[pd.name] = float(shares.sum())
        per_term[(pd.name, "intercept")] = float(shares[0])
        for term in pd.terms:
            per_term[(pd.name, term.spec.label)] = float(shares[term.local].sum())
    total = float(sum(per_parameter.values()))
    return per_parameter, per_term, total


def gaic(loglik: float, edf_total: float, k: float = 2.0) -> float:
    """Generalized Akaike criterion -2 ll + k * edf (negatively oriented)."""
    return -2.0 * loglik + k * edf_total


def posterior_draws(fit: FitResult, nsim: int, seed: int = 0) -> np.ndarray:
    """Draws from the Gaussian posterior approximation N(gamma_hat, (-H_pen)^-1)."""
    if nsim < 1:
        raise ValueError("nsim must be positive")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((nsim, fit.gamma_hat.size))
    sample = chol_precision_sampler(-fit.H_pen)
    return fit.gamma_hat[None, :] + sample(z)


def _quantile_pair(curves: np.ndarray, level: float):
    lo = (1.0 - level) / 2.0
    hi = (1.0 + level) / 2.0
    return np.quantile(curves, lo, axis=0), np.quantile(curves, hi, axis=0)


def credible_intervals(
    fit: FitResult,
    grids: dict | None = None,
    level: float = 0.95,
    nsim: int = 1000,
    seed: int = 0,
    include_intercept: bool = True,
):
    """Pointwise posterior bands for every smooth term.

    ``grids`` optionally maps (parameter, term label) to the covariate grid;
    default is 101 points over the term's knot range. Returns a dict keyed by
    (parameter, term label) with entries x, fit, lower, upper.
    """
    if not 0.0 <= level < 1.0:
        raise ValueError("level must be in [0, 1)")
    draws = posterior_draws(fit, nsim, seed)
    model = fit.model
    out = {}
    for pd in model.predictors:
        for term in pd.terms:
            if term.spec.kind not in ("pspline", "scspline", "linear"):
                continue
            key = (pd.name, term.spec.label)
            if grids is not None and key in grids:
                x = np.asarray(grids[key], dtype=float)
            elif term.grid is not None:
                x = np.linspace(term.grid.lo, term.grid.hi, 101)
            else:
                continue  # linear term without an explicit grid
            G = term.curve_design(x)
            sl = slice(pd.offset + term.local.start, pd.offset + term.local.stop)
            coefs = draws[:, sl]
            point = fit.gamma_hat[sl]
            if term.is_sc:
                curves = np.exp(coefs) @ G.T
                center = G @ np.exp(point)
            else:
                curves = coefs @ G.T
                center = G @ point
            if include_intercept:
                curves = curves + draws[:, pd.offset][:, None]
                center = center + fit.gamma_hat[pd.offset]
            lower, upper = _quantile_pair(curves, level)
            out[key] = {
                "x": x,
                "fit": center,
                "lower": lower,
                "upper": upper,
                "median": np.quantile(curves, 0.5, axis=0),
            }
    return out


def coefficient_intervals(fit: FitResult, level: float = 0.95, nsim: int = 1000, seed: int = 0):
    """Posterior quantile intervals for every coefficient (draw-based)."""
    draws = posterior_draws(fit, nsim, seed)
    lower, upper = _quantile_pair(draws, level)
    return lower, upper
