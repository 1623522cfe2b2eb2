"""Trust-region maximization and smoothing-parameter selection.

The fit alternates two steps to joint convergence: an inner trust-region
Newton maximization of the penalized log-likelihood at fixed smoothing
parameters, and an outer update of the smoothing parameters that keeps the
rescaled estimator as close as possible to its target, measured by

    || B - A(lambda) B ||^2 + 2 trace(A(lambda)),

with B = sqrt(-H) gamma + sqrt(-H)^-1 g and
A = sqrt(-H) (-H + S(lambda))^-1 sqrt(-H) built from the unpenalized
gradient and Hessian (a constant offset of the criterion is dropped).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize

from ._linalg import NumericalError, spd_sqrt_pair
from . import inference as _inference
from . import model as _model
from .inference import ConvergenceReport, FitResult
from .model import ModelSpec, PanelData, PredictorSpec, StackedModel, build_design

LAMBDA_MIN = 1e-8
LAMBDA_MAX = 1e8
RADIUS_MIN = 1e-10
RADIUS_MAX = 1e6


@dataclass(frozen=True)
class FitOptions:
    max_outer: int = 200
    max_inner: int = 150
    gamma_tol: float = 1e-6
    lambda_tol: float = 1e-5
    grad_tol: float = 1e-5
    radius0: float = 1.0
    lambda_init: float | None = None  # None: per-block defaults
    lambda_fixed: np.ndarray | None = None
    staged_start: bool = True
    verbose: bool = False


# starting smoothing parameters by block role: location smooths start
# flexible (the data speak loudly about the mean), scale and dependence
# smooths start stiff (weakly identified; released only on evidence),
# random effects near the reciprocal of a generous prior variance
LAMBDA_INIT_DEFAULTS = {"mu_smooth": 1.0, "re": 4.0, "scale_smooth": 100.0, "delta_smooth": 100.0}


def _default_lambda_init(model: StackedModel) -> np.ndarray:
    lam = np.empty(len(model.penalties))
    for j, pb in enumerate(model.penalties):
        if pb.label.startswith("random_effect"):
            lam[j] = LAMBDA_INIT_DEFAULTS["re"]
        elif pb.parameter.startswith("mu"):
            lam[j] = LAMBDA_INIT_DEFAULTS["mu_smooth"]
        elif pb.parameter == "delta":
            lam[j] = LAMBDA_INIT_DEFAULTS["delta_smooth"]
        else:
            lam[j] = LAMBDA_INIT_DEFAULTS["scale_smooth"]
    return lam


@dataclass(frozen=True)
class LambdaState:
    lam: np.ndarray
    criterion_value: float


@dataclass(frozen=True)
class TrustRegionState:
    gamma: np.ndarray
    radius: float = 1.0
    iteration: int = 0
    converged: bool = False
    rejected_steps: int = 0
    value: float = -np.inf
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None
    scale: np.ndarray | None = None  # diagonal preconditioner sqrt(diag(-H))
    eig: tuple | None = None  # eigendecomposition of the scaled -hess, reused on rejects


def _tr_subproblem(evals, evecs, g, radius):
    """Maximize g'r - r'Br/2 over ||r|| <= radius, B = evecs diag(evals) evecs'.

    Returns (r, predicted increase, hit_boundary).
    """
    gh = evecs.T @ g
    scale = max(1.0, float(np.abs(evals).max()))
    lam_min = float(evals.min())
    if lam_min > 1e-12 * scale:
        r_hat = gh / evals
        if np.linalg.norm(r_hat) <= radius:
            pred = 0.5 * float(gh @ r_hat)
            return evecs @ r_hat, max(pred, 0.0), False

    nu0 = max(0.0, -lam_min)

    def r_hat_at(nu):
        return gh / (evals + nu)

    # hard case: no gradient component on the bottom eigenspace and the
    # limiting solution is interior; fill to the boundary along that space
    d0 = evals + nu0
    well = d0 > 1e-10 * scale
    r0 = np.where(well, gh / np.where(well, d0, 1.0), 0.0)
    gnorm = np.linalg.norm(gh)
    if nu0 > 0.0 and np.all(np.abs(gh[~well]) <= 1e-12 * (1.0 + gnorm)) and np.linalg.norm(r0) < radius:
        tau = np.sqrt(max(radius**2 - float(r0 @ r0), 0.0))
        r_hat = r0.copy()
        r_hat[int(np.argmin(evals))] += tau
    else:
        # safeguarded Newton on psi(nu) = 1/||r(nu)|| - 1/radius
        lo = nu0
        hi = nu0 + gnorm / radius + scale
        while np.linalg.norm(r_hat_at(hi)) > radius:
            hi = 2.0 * hi + scale
        nu = min(max(nu0 + gnorm / radius, lo + 1e-3 * (hi - lo)), hi)
        for _ in range(100):
            d = evals + nu
            r_hat = gh / d
            nrm = np.linalg.norm(r_hat)
            if nrm > radius:
                lo = nu
            else:
                hi = nu
            psi = 1.0 / nrm - 1.0 / radius
            if abs(psi) < 1e-12 / radius:
                break
            dpsi = float(np.sum(gh * gh / d**3)) / nrm**3
            step = psi / dpsi
            nu_new = nu - step
            if not (lo < nu_new < hi):
                nu_new = 0.5 * (lo + hi)
            if abs(nu_new - nu) < 1e-15 * max(1.0, nu):
                nu = nu_new
                break
            nu = nu_new
        r_hat = r_hat_at(nu)
    pred = float(gh @ r_hat) - 0.5 * float((r_hat * evals) @ r_hat)
    return evecs @ r_hat, max(pred, 0.0), True


def _ensure_derivatives(state: TrustRegionState, problem) -> TrustRegionState:
    if state.grad is not None:
        return state
    f, g, H = problem.derivatives(state.gamma)
    if not np.isfinite(f):
        raise NumericalError("objective not finite at the current iterate")
    B = -0.5 * (H + H.T)
    # diagonal preconditioning: block curvatures can span many orders of
    # magnitude (exp links, heavily penalized terms), which starves an
    # unscaled ball; the subproblem stays an exact eigen solve
    d = np.diag(B)
    dmax = float(d.max(initial=1.0))
    scale = np.sqrt(np.clip(d, max(1e-8 * max(dmax, 1.0), 1e-12), None))
    Bs = B / scale[:, None] / scale[None, :]
    w, V = np.linalg.eigh(Bs)
    return replace(state, value=f, grad=g, hess=H, scale=scale, eig=(w, V))


def trust_region_step(
    state: TrustRegionState,
    problem,
    shrink: float = 0.25,
    grow: float = 2.0,
    low: float = 0.25,
    high: float = 0.75,
    accept_min: float = 1e-4,
) -> TrustRegionState:
    """One accept/reject trust-region update of the maximizer state.

    ``problem`` provides value(gamma) and derivatives(gamma) -> (f, g, H).
    A rejected trial leaves gamma untouched and shrinks the radius.
    """
    state = _ensure_derivatives(state, problem)
    evals, evecs = state.eig
    rs, pred, boundary = _tr_subproblem(evals, evecs, state.grad / state.scale, state.radius)
    r = rs / state.scale
    trial = state.gamma + r
    f_trial = problem.value(trial)
    if pred <= 0.0:
        pred = np.finfo(float).tiny
    ratio = (f_trial - state.value) / pred if np.isfinite(f_trial) else -np.inf
    if not np.isfinite(f_trial) or ratio <= accept_min:
        return replace(
            state,
            radius=max(state.radius * shrink, RADIUS_MIN),
            iteration=state.iteration + 1,
            rejected_steps=state.rejected_steps + 1,
        )
    radius = state.radius
    if ratio > high and boundary:
        radius = min(radius * grow, RADIUS_MAX)
    elif ratio < low:
        radius = max(radius * shrink, RADIUS_MIN)
    new = replace(
        state,
        gamma=trial,
        radius=radius,
        iteration=state.iteration + 1,
        value=f_trial,
        grad=None,
        hess=None,
        scale=None,
        eig=None,
    )
    return _ensure_derivatives(new, problem)


class _PenalizedProblem:
    """Objective bundle: penalized log-likelihood of a stacked model.

    ``freeze`` optionally pins a set of coefficients: their gradient entries
    are zeroed and their Hessian rows/columns replaced by a unit diagonal, so
    trust-region steps never move them.
    """

    def __init__(self, model: StackedModel, data: PanelData, lam: np.ndarray, freeze=None):
        self.model = model
        self.data = data
        self.lam = lam
        self.freeze = freeze

    def value(self, gamma):
        return _model.penalized_loglik(self.model, self.data, gamma, self.lam)

    def derivatives(self, gamma):
        f = _model.penalized_loglik(self.model, self.data, gamma, self.lam)
        g = _model.penalized_grad(self.model, self.data, gamma, self.lam)
        H = _model.penalized_hessian(self.model, self.data, gamma, self.lam)
        if self.freeze is not None:
            g = g.copy()
            H = H.copy()
            g[self.freeze] = 0.0
            H[self.freeze, :] = 0.0
            H[:, self.freeze] = 0.0
            H[self.freeze, self.freeze] = -1.0
        return f, g, H


def _inner_maximize(model, data, gamma0, lam, options: FitOptions, freeze=None):
    """Trust-region loop at fixed lambda. Returns (state, n_iter, converged)."""
    problem = _PenalizedProblem(model, data, lam, freeze=freeze)
    state = TrustRegionState(gamma=np.asarray(gamma0, dtype=float), radius=options.radius0)
    state = _ensure_derivatives(state, problem)
    converged = False
    for _ in range(options.max_inner):
        if np.max(np.abs(state.grad)) < options.grad_tol * (1.0 + abs(state.value)):
            converged = True
            break
        state = trust_region_step(state, problem)
        if state.radius <= RADIUS_MIN * 1.001:
            break
    if not converged and np.max(np.abs(state.grad)) < options.grad_tol * (1.0 + abs(state.value)):
        converged = True
    return state, state.iteration, converged


def select_lambda(H, g, gamma, penalty_blocks, current=None, multistart=True) -> LambdaState:
    """Choose smoothing parameters from the unpenalized (H, g) at gamma.

    ``penalty_blocks`` is a sequence of (slice, D) pairs into gamma. The
    criterion is minimized over log lambda by L-BFGS-B from three fixed
    starts (1e-2, 1, 1e2 on every component) plus the current lambda;
    ``multistart=False`` keeps only the warm start (used between alternation
    steps once the canonical starts have been scanned).
    """
    gamma = np.asarray(gamma, dtype=float)
    p = gamma.size
    Bf, R, Rinv = spd_sqrt_pair(-np.asarray(H, dtype=float))
    Bvec = R @ gamma + Rinv @ np.asarray(g, dtype=float)
    blocks = list(penalty_blocks)
    if not blocks:
        # A = I exactly: residual vanishes and the trace is the dimension
        return LambdaState(lam=np.zeros(0), criterion_value=2.0 * p)
    k = len(blocks)
    RB = R @ Bvec

    def criterion(loglam):
        """Value and analytic gradient in log lambda.

        With M = Bf + sum_j lam_j E_j, A = R M^-1 R:
          dV/dlam_j = 2 u' E_j v - 2 tr(E_j M^-1 Bf M^-1),
        u = M^-1 R r, v = M^-1 R Bvec, r = Bvec - A Bvec.
        """
        lam = np.exp(loglam)
        M = Bf.copy()
        for lj, (sl, D) in zip(lam, blocks):
            M[sl, sl] += lj * D
        try:
            fac = linalg.cho_factor(M, lower=True, check_finite=False)
        except linalg.LinAlgError:
            return 1e50, np.zeros(k)
        Z = linalg.cho_solve(fac, Bf, check_finite=False)  # M^-1 Bf
        v = linalg.cho_solve(fac, RB, check_finite=False)
        r = Bvec - R @ v
        u = linalg.cho_solve(fac, R @ r, check_finite=False)
        Z2 = linalg.cho_solve(fac, Z.T, check_finite=False).T  # M^-1 Bf M^-1
        val = float(r @ r) + 2.0 * float(np.trace(Z))
        grad = np.empty(k)
        for j, (lj, (sl, D)) in enumerate(zip(lam, blocks)):
            grad[j] = lj * 2.0 * (u[sl] @ D @ v[sl] - float(np.sum(D * Z2[sl, sl])))
        return val, grad

    bounds = [(np.log(LAMBDA_MIN), np.log(LAMBDA_MAX))] * k
    starts = [np.full(k, np.log(v)) for v in (1e-2, 1.0, 1e2)] if multistart else []
    if current is not None and len(current) == k:
        starts.append(np.log(np.clip(np.asarray(current, dtype=float), LAMBDA_MIN, LAMBDA_MAX)))
    if not starts:
        starts = [np.zeros(k)]
    best_x, best_f = None, np.inf
    for x0 in starts:
        res = optimize.minimize(
            criterion,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"ftol": 1e-12, "gtol": 1e-8, "maxiter": 200},
        )
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
    return LambdaState(lam=np.exp(best_x), criterion_value=best_f)


def _moment_scales(resid: np.ndarray, sign: int):
    """Split residual spread into (sigma_v0, sigma_u0) via the third moment.

    For eps = V + s U with half-normal U, the skewness identifies the
    inefficiency scale: E[(eps - E eps)^3] = s (1 - 4/pi) sqrt(2/pi) sigma_u^3.
    """
    v = max(float(np.var(resid)), 1e-8)
    m3 = float(np.mean((resid - resid.mean()) ** 3))
    c3 = (1.0 - 4.0 / np.pi) * np.sqrt(2.0 / np.pi)  # negative constant
    su3 = sign * m3 / c3
    su2 = np.clip(np.sign(su3) * abs(su3) ** (2.0 / 3.0), 0.05 * v, 0.95 * v / (1.0 - 2.0 / np.pi))
    sv2 = max(v - (1.0 - 2.0 / np.pi) * su2, 0.05 * v)
    return float(np.sqrt(sv2)), float(np.sqrt(su2))


def _ridge_start(model: StackedModel, data: PanelData) -> np.ndarray:
    """Heuristic starting coefficients: penalized least squares for the
    location predictors, moment-matched scale intercepts, neutral rest."""
    spec = model.spec
    gamma = np.zeros(model.n_coef)
    for m, margin in enumerate(spec.margins, start=1):
        y = data.y[:, m - 1]
        pd = model.predictor(f"mu{m}")
        ident = ~pd.exp_cols
        X = pd.X[:, ident]
        A = X.T @ X + 1e-6 * data.n_obs * np.eye(X.shape[1])
        for pb in model.penalties:
            if pb.parameter == pd.name:
                lo, hi = pb.sl.start - pd.offset, pb.sl.stop - pd.offset
                keep = ident[lo:hi]
                if keep.all():
                    idx = np.flatnonzero(ident)
                    pos = np.searchsorted(idx, np.arange(lo, hi))
                    A[np.ix_(pos, pos)] += pb.D
        beta = np.linalg.solve(A, X.T @ y)
        coefs = np.zeros(pd.n_coef)
        coefs[ident] = beta
        coefs[pd.exp_cols] = -1.0
        resid = y - X @ beta
        sv0, su0 = _moment_scales(resid, margin.sign)
        coefs[0] -= margin.sign * su0 * np.sqrt(2.0 / np.pi)
        gamma[pd.sl] = coefs
        floor = float(np.exp(model.log_sigma_v_min[m - 1]))
        for which, s0 in (("sigma_v", max(sv0, 2.0 * floor)), ("sigma_u", su0)):
            spd = model.predictor(f"{which}{m}")
            block = np.zeros(spd.n_coef)
            block[0] = float(np.clip(np.log(s0), -6.0, 6.0))
            block[spd.exp_cols] = -1.0
            gamma[spd.sl] = block
    if spec.has_delta:
        pd = model.predictor("delta")
        block = np.zeros(pd.n_coef)
        block[pd.exp_cols] = -1.0
        gamma[pd.sl] = block
    return gamma


def _margin_submodel(spec: ModelSpec, m: int) -> ModelSpec:
    """Single-margin independence model with all of the margin's terms."""
    return ModelSpec(margins=(spec.margins[m],), copula="independence")


def _transfer(gamma_to, model_to, name_to, gamma_from, model_from, name_from, terms_too=True):
    pd_t = model_to.predictor(name_to)
    pd_f = model_from.predictor(name_from)
    gamma_to[pd_t.offset] = gamma_from[pd_f.offset]
    if not terms_too:
        return
    labels_f = {t.spec.label: t for t in pd_f.terms}
    for t in pd_t.terms:
        src = labels_f.get(t.spec.label)
        if src is not None and src.n_coef == t.n_coef:
            gamma_to[pd_t.offset + t.local.start : pd_t.offset + t.local.stop] = gamma_from[
                pd_f.offset + src.local.start : pd_f.offset + src.local.stop
            ]


def _frozen_margin_fit(spec, data, m, options):
    """Margin fit with the noise-scale predictor pinned at its moment value.

    A flexible location predictor plus a one-sided error lets maximum
    likelihood chase the group frontier while the noise scale collapses; the
    pin closes that degenerate direction during staging. The joint copula fit
    disciplines the noise scale once the margins are coupled.
    """
    sub_data = PanelData(
        dmu=data.dmu,
        time=data.time,
        y=data.y[:, m : m + 1],
        covariates=data.covariates,
    )
    sub_spec = _margin_submodel(spec, m)
    sub_model = build_design(sub_spec, sub_data)
    pd_sv = sub_model.predictor("sigma_v1")
    freeze = np.arange(pd_sv.offset, pd_sv.offset + pd_sv.n_coef)
    quick = replace(options, staged_start=False, max_outer=20, verbose=False)
    return (
        fit(sub_spec, sub_data, quick, _freeze=freeze),
        sub_model,
    )


def _staged_start(spec, data, model, options):
    """Seed the model from pinned-noise margin fits."""
    gamma = _ridge_start(model, data)
    if options.lambda_init is None:
        lam = _default_lambda_init(model)
    else:
        lam = np.full(len(model.penalties), options.lambda_init, dtype=float)
    for m in range(spec.n_margins):
        try:
            sub, _ = _frozen_margin_fit(spec, data, m, options)
        except NumericalError:
            continue
        sub_model = sub.model
        suffix = "" if spec.n_margins == 1 else str(m + 1)
        for which in ("mu", "sigma_v", "sigma_u"):
            _transfer(gamma, model, f"{which}{m + 1}", sub.gamma_hat, sub_model, f"{which}1")
        lam_map = {
            (pb.parameter, pb.label): lj for pb, lj in zip(sub_model.penalties, sub.lambda_hat)
        }
        for j, pb in enumerate(model.penalties):
            key = (pb.parameter.replace(str(m + 1), "1", 1), pb.label)
            if pb.parameter.rstrip("0123456789").endswith(("mu", "sigma_v", "sigma_u")) and \
                    pb.parameter.endswith(str(m + 1)) and key in lam_map:
                # clip: staging misspecification can push lambda to a bound,
                # which would strangle the joint fit
                lam[j] = float(np.clip(lam_map[key], 1e-3, 1e3))
    return gamma, lam


def fit(
    spec: ModelSpec,
    data: PanelData,
    options: FitOptions | None = None,
    _warm=None,
    _freeze=None,
) -> FitResult:
    """Penalized maximum likelihood fit with smoothing-parameter selection.

    Alternates trust-region maximization over the coefficients at fixed
    lambda with the smoothing-parameter criterion until the relative
    coefficient change falls below gamma_tol and the relative criterion
    change below lambda_tol. Non-convergence is flagged on the result, not
    raised. ``_warm`` optionally supplies (gamma0, lambda0) and bypasses the
    staged start.
    """
    options = options or FitOptions()
    model = build_design(spec, data)
    n_pen = len(model.penalties)
    if options.lambda_fixed is not None:
        lam = np.broadcast_to(
            np.asarray(options.lambda_fixed, dtype=float), (n_pen,)
        ).copy()
        estimate_lambda = False
    else:
        if options.lambda_init is None:
            lam = _default_lambda_init(model)
        else:
            lam = np.full(n_pen, options.lambda_init, dtype=float)
        estimate_lambda = n_pen > 0
    if _warm is not None:
        gamma = np.asarray(_warm[0], dtype=float).copy()
        if estimate_lambda and _warm[1] is not None:
            lam = np.asarray(_warm[1], dtype=float).copy()
    elif options.staged_start and _freeze is None:
        gamma, lam_start = _staged_start(spec, data, model, options)
        if estimate_lambda:
            lam = lam_start
    else:
        gamma = _ridge_start(model, data)
    if not np.isfinite(_model.penalized_loglik(model, data, gamma, lam)):
        # fall back progressively: staged and ridge starts can land on a
        # numerical cliff when a stage collapsed
        fallbacks = [_ridge_start(model, data)]
        neutral = np.zeros(model.n_coef)
        for m, margin in enumerate(spec.margins, start=1):
            sd = float(np.std(data.y[:, m - 1])) or 1.0
            for which in ("sigma_v", "sigma_u"):
                neutral[model.predictor(f"{which}{m}").offset] = np.log(sd)
            neutral[model.predictor(f"mu{m}").offset] = float(np.mean(data.y[:, m - 1]))
        fallbacks.append(neutral)
        for cand in fallbacks:
            if np.isfinite(_model.penalized_loglik(model, data, cand, lam)):
                gamma = cand
                break
        else:
            raise NumericalError("could not find a valid starting point")

    inner_total = 0
    rejected_total = 0
    outer_done = 0
    stalled = 0
    rejected_moves = 0
    prev_crit = None
    converged_outer = not estimate_lambda
    inner_converged = False
    crit_value = np.nan
    state = None
    message = ""

    def _gaic_at(gamma_, lam_):
        _, _, total = _inference.edf(model, gamma_, lam_)
        return _inference.gaic(_model.loglik_unpenalized(model, data, gamma_), total), total

    for outer in range(1, options.max_outer + 1):
        outer_done = outer
        state, iters, inner_converged = _inner_maximize(model, data, gamma, lam, options, freeze=_freeze)
        gamma = state.gamma
        inner_total += iters
        rejected_total += state.rejected_steps
        if not estimate_lambda:
            break
        if not inner_converged:
            # the criterion is unreliable at non-stationary points: keep
            # lambda and give the coefficient loop another budget
            stalled += 1
            if stalled >= 3:
                message = "coefficient loop failed to reach stationarity"
                break
            if options.verbose:
                print(f"[outer {outer:3d}] inner loop not stationary, continuing")
            continue
        stalled = 0
        gaic_now, edf_now = _gaic_at(gamma, lam)
        S = model.S(lam)
        g_unpen = state.grad + model.penalty_grad(gamma, lam)
        H_unpen = state.hess + S
        try:
            lamstate = select_lambda(
                H_unpen,
                g_unpen,
                gamma,
                [(pb.sl, pb.D) for pb in model.penalties],
                current=lam,
                multistart=(outer == 1 or outer % 8 == 0),
            )
        except NumericalError as exc:
            message = f"smoothing-parameter step failed: {exc}"
            break
        crit_value = lamstate.criterion_value
        # proposed move in log lambda, damped to two orders of magnitude
        target = np.clip(lamstate.lam, lam / 100.0, lam * 100.0)
        target = np.clip(target, LAMBDA_MIN, LAMBDA_MAX)
        step = np.log(target) - np.log(lam)
        crit_small = (
            prev_crit is not None
            and abs(crit_value - prev_crit) / (1.0 + abs(crit_value)) < options.lambda_tol
        )
        if np.max(np.abs(step)) < 1e-8 or (crit_small and np.max(np.abs(step)) < 0.05):
            converged_outer = True
            break
        # GAIC arbitration: accept the largest backtracked fraction of the
        # proposed move that does not worsen the model-choice criterion
        # (ties go to the move, which favors the criterion's preference)
        accepted = False
        for frac in (1.0, 0.5, 0.25, 0.1):
            lam_try = np.exp(np.log(lam) + frac * step)
            state_try, iters_try, conv_try = _inner_maximize(
                model, data, gamma, lam_try, options, freeze=_freeze
            )
            inner_total += iters_try
            rejected_total += state_try.rejected_steps
            gaic_try, edf_try = _gaic_at(state_try.gamma, lam_try)
            # moves that buy extra effective degrees of freedom must clear a
            # hurdle beyond the plain GAIC tie: in-sample spikes (copula
            # dependence saturating, noise scales diving) are otherwise
            # marginally GAIC-profitable at small N
            hurdle = 2.0 * max(0.0, edf_try - edf_now)
            if gaic_try <= gaic_now + 1e-3 - hurdle:
                gchange = np.max(np.abs(state_try.gamma - gamma)) / (
                    1.0 + np.max(np.abs(state_try.gamma))
                )
                lam = lam_try
                gamma = state_try.gamma
                state = state_try
                inner_converged = conv_try
                accepted = True
                if gchange < options.gamma_tol and crit_small:
                    converged_outer = True
                break
        if options.verbose:
            print(
                f"[outer {outer:3d}] llpen={state.value:.4f} gaic={gaic_now:.3f} "
                f"criterion={crit_value:.4f} accepted={accepted} "
                f"lam={np.array2string(lam, precision=3)}"
            )
        if not accepted:
            # no fraction of the criterion's direction improves GAIC at this
            # iterate; keep lambda and retry from the refreshed state
            rejected_moves += 1
            if rejected_moves >= 2:
                converged_outer = True
                break
        else:
            rejected_moves = 0
        if converged_outer:
            break
        prev_crit = crit_value

    model.gamma = gamma
    model.lam = lam
    grad_norm = float(np.max(np.abs(state.grad))) if state is not None else np.inf
    converged = bool(converged_outer and inner_converged)
    if not converged and not message:
        message = "iteration limit reached before joint convergence"
    per_param, per_term, total = _inference.edf(model, gamma, lam)
    ll = _model.loglik_unpenalized(model, data, gamma)
    report = ConvergenceReport(
        converged=converged,
        outer_iterations=outer_done,
        inner_iterations=inner_total,
        rejected_steps=rejected_total,
        grad_inf_norm=grad_norm,
        message="" if converged else message,
    )
    return FitResult(
        model=model,
        gamma_hat=gamma,
        lambda_hat=lam,
        H_pen=state.hess,
        loglik=ll,
        loglik_penalized=float(state.value),
        edf_by_parameter=per_param,
        edf_by_term=per_term,
        edf_total=total,
        gaic=_inference.gaic(ll, total),
        lambda_criterion=float(crit_value),
        convergence=report,
    )
