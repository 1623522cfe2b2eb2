"""Joint penalized log-likelihood of copula-linked composed-error margins.

A model couples M composed-error margins (M = 2 for the parametric copula
families, any M under independence) whose seven distribution parameters
(mu_m, sigma_v_m, sigma_u_m per margin and the copula predictor delta) each
carry an additive predictor: intercept plus linear, penalized-spline,
shape-constrained-spline, or random-effect terms. The stacked coefficient
vector gamma collects all predictors; the penalty is the block-diagonal
lambda-weighted quadratic form assembled from the term penalties.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import basis as _basis
from . import copula as _copula
from . import margins as _margins
from .basis import (
    SC_RAW_BOUND,
    DesignBlock,
    KnotGrid,
    bspline_design,
    center_block,
    difference_penalty,
    random_effect_design,
    sc_penalty,
    sc_transform_matrix,
)

TERM_KINDS = ("linear", "pspline", "scspline", "random_effect")

# predictor values for scale parameters map through exp; candidate
# coefficients putting any sigma outside these bounds are invalid points
SIGMA_MIN = 1e-8
SIGMA_MAX = 1e8
_LOG_SIGMA_MIN = np.log(SIGMA_MIN)
_LOG_SIGMA_MAX = np.log(SIGMA_MAX)

# marginal CDF values are kept strictly inside (0, 1) before entering the
# copula; the chain-rule contribution is zero wherever the clamp is active
W_EPS = 1e-12

# copula predictor bound: far beyond any identifiable dependence, the link
# saturates and coefficients can wander freely; reject such steps
ETA_DELTA_BOUND = 15.0

# any single observation contributing less than this to the log-likelihood
# marks a numerical cliff; such coefficient points are rejected as invalid
ROW_LL_FLOOR = -1e8

# noise floor: the noise scale maps through the smooth saturating link
# sigma_v = sqrt(floor^2 + exp(eta)^2) with floor at this fraction of sd(y).
# A flexible location predictor plus a one-sided error otherwise lets the
# likelihood push the noise scale toward zero (frontier chasing), a
# degenerate region with astronomic curvature; the saturation keeps the
# likelihood smooth and bounded there while being indistinguishable from a
# log link a few floors up.
SIGMA_V_FLOOR_FRAC = 1e-2


@dataclass(frozen=True)
class TermSpec:
    """One smooth term of an additive predictor."""

    kind: str
    covariate: str
    n_knots: int = 10
    degree: int = 3
    diff_order: int = 2
    x_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}; choose from {TERM_KINDS}")

    @property
    def label(self) -> str:
        return f"{self.kind}({self.covariate})"


@dataclass(frozen=True)
class PredictorSpec:
    """Terms of one distribution parameter's predictor (intercept implicit)."""

    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))


@dataclass(frozen=True)
class MarginSpec:
    """Output column, frontier sign, and the three margin predictors."""

    output: str
    sign: int = -1
    mu: PredictorSpec = PredictorSpec()
    sigma_v: PredictorSpec = PredictorSpec()
    sigma_u: PredictorSpec = PredictorSpec()

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError("margin sign must be -1 (production) or +1 (cost)")

    def predictor(self, which: str) -> PredictorSpec:
        return {"mu": self.mu, "sigma_v": self.sigma_v, "sigma_u": self.sigma_u}[which]


@dataclass(frozen=True)
class ModelSpec:
    """Declarative model description: margins, copula family, delta terms."""

    margins: tuple
    copula: str = "independence"
    delta: PredictorSpec = PredictorSpec()

    def __post_init__(self):
        object.__setattr__(self, "margins", tuple(self.margins))
        _copula._check_family(self.copula)
        if not self.margins:
            raise ValueError("at least one margin required")
        if self.has_delta and self.n_margins != 2:
            raise ValueError(
                f"copula family {self.copula!r} requires exactly two margins, "
                f"got {self.n_margins}"
            )

    @property
    def n_margins(self) -> int:
        return len(self.margins)

    @property
    def has_delta(self) -> bool:
        return _copula.has_parameter(self.copula)

    def parameter_names(self) -> list[str]:
        names = []
        for m in range(1, self.n_margins + 1):
            names += [f"mu{m}", f"sigma_v{m}", f"sigma_u{m}"]
        if self.has_delta:
            names.append("delta")
        return names

    def predictor(self, name: str) -> PredictorSpec:
        if name == "delta":
            if not self.has_delta:
                raise KeyError("model has no copula parameter")
            return self.delta
        which, m = name.rstrip("0123456789"), int(name[len(name.rstrip("0123456789")):])
        return self.margins[m - 1].predictor(which)


@dataclass
class PanelData:
    """Unbalanced panel: DMU ids, time index, M outputs, named covariates."""

    dmu: np.ndarray
    time: np.ndarray
    y: np.ndarray
    covariates: dict

    def __post_init__(self):
        self.dmu = np.asarray(self.dmu)
        self.time = np.asarray(self.time)
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.y.shape[0] == 1 and self.dmu.size > 1:
            self.y = self.y.T
        n = self.dmu.size
        if self.time.size != n or self.y.shape[0] != n:
            raise ValueError("dmu, time, and y row counts disagree")
        for name, col in self.covariates.items():
            col = np.asarray(col)
            if col.size != n:
                raise ValueError(f"covariate {name!r} has wrong length")
            self.covariates[name] = col
        pairs = np.stack([self.dmu, self.time], axis=1)
        if np.unique(pairs, axis=0).shape[0] != n:
            raise ValueError("(dmu, time) pairs must be unique")

    @classmethod
    def from_frame(cls, df, outputs, dmu_col="dmu_id", time_col="time"):
        for col in [dmu_col, time_col, *outputs]:
            if col not in df.columns:
                raise ValueError(f"column {col!r} not in data (columns: {list(df.columns)})")
        covs = {
            c: df[c].to_numpy()
            for c in df.columns
            if c not in (dmu_col, time_col, *outputs)
        }
        return cls(
            dmu=df[dmu_col].to_numpy(),
            time=df[time_col].to_numpy(),
            y=df[list(outputs)].to_numpy(dtype=float),
            covariates=covs,
        )

    @property
    def n_obs(self) -> int:
        return self.dmu.size

    @property
    def n_outputs(self) -> int:
        return self.y.shape[1]

    def column(self, name: str) -> np.ndarray:
        if name in self.covariates:
            return np.asarray(self.covariates[name], dtype=float)
        if name in ("dmu_id", "dmu"):
            return self.dmu
        raise ValueError(
            f"unknown covariate {name!r}; available: {sorted(self.covariates)} plus 'dmu_id'"
        )


@dataclass
class TermDesign:
    """A term's evaluated block plus everything needed to re-evaluate it."""

    spec: TermSpec
    block: DesignBlock
    local: slice  # columns within the predictor's coefficient vector
    grid: KnotGrid | None = None
    groups: np.ndarray | None = None  # original group labels, random effects

    @property
    def n_coef(self) -> int:
        return self.block.n_coef

    @property
    def is_sc(self) -> bool:
        return self.spec.kind == "scspline"

    @property
    def penalized(self) -> bool:
        return self.spec.kind in ("pspline", "scspline", "random_effect")

    def design_at(self, data: PanelData) -> np.ndarray:
        """Evaluate the (transformed, centered) term design for new data."""
        if self.spec.kind == "linear":
            return data.column(self.spec.covariate)[:, None].astype(float)
        if self.spec.kind == "random_effect":
            labels = data.column(self.spec.covariate)
            unseen = np.setdiff1d(labels, self.groups)
            if unseen.size:
                raise ValueError(
                    f"random-effect term {self.spec.label}: unseen group(s) {unseen[:5].tolist()}"
                )
            idx = np.searchsorted(self.groups, labels)
            Z = np.zeros((labels.size, self.groups.size))
            Z[np.arange(labels.size), idx] = 1.0
            return Z
        x = data.column(self.spec.covariate)
        return self.curve_design(x)

    def curve_design(self, x) -> np.ndarray:
        """Design rows of the fitted curve at covariate values x (smooths)."""
        if self.spec.kind == "linear":
            return np.asarray(x, dtype=float)[:, None]
        if self.spec.kind not in ("pspline", "scspline"):
            raise ValueError(f"term {self.spec.label} has no curve design")
        Z = bspline_design(np.asarray(x, dtype=float), self.grid)
        if self.spec.kind == "pspline":
            return Z @ self.block.center_T
        Zeff = Z @ self.block.Sigma[:, 1:]
        return Zeff - self.block.center_means


@dataclass
class PredictorDesign:
    """One distribution parameter's assembled design."""

    name: str
    offset: int  # start of this predictor's coefficients in gamma
    X: np.ndarray | None  # training design incl. intercept column
    exp_cols: np.ndarray  # mask of coefficients entering through exp()
    terms: list

    @property
    def n_coef(self) -> int:
        return int(self.exp_cols.size)

    @property
    def sl(self) -> slice:
        return slice(self.offset, self.offset + self.n_coef)

    def coef_transform(self, g: np.ndarray) -> np.ndarray:
        if not self.exp_cols.any():
            return g
        tau = g.copy()
        tau[self.exp_cols] = np.exp(g[self.exp_cols])
        return tau

    def eta(self, g: np.ndarray, X=None) -> np.ndarray:
        X = self.X if X is None else X
        return X @ self.coef_transform(g)

    def jacobian(self, g: np.ndarray, X=None) -> np.ndarray:
        """d eta / d coefficients (equals X except on exp-transformed columns)."""
        X = self.X if X is None else X
        if not self.exp_cols.any():
            return X
        scale = np.ones(self.n_coef)
        scale[self.exp_cols] = np.exp(g[self.exp_cols])
        return X * scale[None, :]


@dataclass
class PenaltyBlock:
    """One smoothing-parameter's quadratic penalty within gamma."""

    parameter: str
    label: str
    sl: slice
    D: np.ndarray


@dataclass
class StackedModel:
    """Assembled design for all predictors plus current (gamma, lambda)."""

    spec: ModelSpec
    predictors: list
    penalties: list
    n_coef: int
    gamma: np.ndarray = None
    lam: np.ndarray = None
    log_sigma_v_min: np.ndarray = None  # per-margin noise floor, log scale

    def __post_init__(self):
        if self.gamma is None:
            self.gamma = np.zeros(self.n_coef)
        if self.lam is None:
            self.lam = np.ones(len(self.penalties))
        if self.log_sigma_v_min is None:
            self.log_sigma_v_min = np.full(self.spec.n_margins, _LOG_SIGMA_MIN)

    def predictor(self, name: str) -> PredictorDesign:
        for pd in self.predictors:
            if pd.name == name:
                return pd
        raise KeyError(name)

    def S(self, lam=None) -> np.ndarray:
        """Block-diagonal lambda-weighted penalty matrix."""
        lam = self.lam if lam is None else np.asarray(lam, dtype=float)
        S = np.zeros((self.n_coef, self.n_coef))
        for lj, pb in zip(lam, self.penalties):
            S[pb.sl, pb.sl] += lj * pb.D
        return S

    def penalty_value(self, gamma, lam=None):
        lam = self.lam if lam is None else lam
        val = 0.0
        for lj, pb in zip(lam, self.penalties):
            g = gamma[pb.sl]
            val += lj * (g @ pb.D @ g)
        return 0.5 * val

    def penalty_grad(self, gamma, lam=None):
        lam = self.lam if lam is None else lam
        out = np.zeros_like(gamma)
        for lj, pb in zip(lam, self.penalties):
            out[pb.sl] += lj * (pb.D @ gamma[pb.sl])
        return out

    def eta_matrix(self, gamma=None) -> np.ndarray:
        gamma = self.gamma if gamma is None else gamma
        return np.column_stack([pd.eta(gamma[pd.sl]) for pd in self.predictors])

    def split(self, gamma) -> dict:
        return {pd.name: gamma[pd.sl] for pd in self.predictors}


def _build_term(tspec: TermSpec, data: PanelData):
    """Returns (TermDesign proto without local slice, penalty D or None)."""
    if tspec.kind == "linear":
        x = data.column(tspec.covariate)
        block = DesignBlock(Z=x[:, None].astype(float), D=np.zeros((1, 1)))
        return block, None, None, None
    if tspec.kind == "random_effect":
        labels = data.column(tspec.covariate)
        groups = np.unique(labels)
        ids = np.searchsorted(groups, labels) + 1
        block = random_effect_design(ids.astype(int))
        return block, block.D, None, groups
    x = data.column(tspec.covariate)
    distinct = np.unique(x).size
    if distinct < tspec.n_knots:
        raise ValueError(
            f"covariate {tspec.covariate!r} has {distinct} distinct values; "
            f"{tspec.n_knots} knots requested"
        )
    lo, hi = tspec.x_range if tspec.x_range is not None else (x.min(), x.max())
    grid = KnotGrid.equidistant(float(lo), float(hi), tspec.n_knots, tspec.degree)
    Q = grid.n_basis
    Zraw = bspline_design(x, grid)
    if tspec.kind == "pspline":
        blk = center_block(DesignBlock(Z=Zraw, D=difference_penalty(Q, tspec.diff_order)))
        return blk, blk.D, grid, None
    # scspline: drop the transform's free level (column 1 of Sigma spans the
    # intercept direction) and identify by column-mean centering, which a
    # reparameterization cannot do through the exp transform
    Sigma = sc_transform_matrix(Q)
    Zeff = Zraw @ Sigma[:, 1:]
    means = Zeff.mean(axis=0)
    P = sc_penalty(Q)[:, 1:]
    D = P.T @ P
    blk = DesignBlock(
        Z=Zeff - means[None, :],
        D=D,
        transform="sc_monotone_concave",
        Sigma=Sigma,
        centered=True,
        center_means=means,
    )
    return blk, D, grid, None


def build_design(spec: ModelSpec, data: PanelData) -> StackedModel:
    """Evaluate every term of every predictor and assemble the stacked model."""
    if data.n_obs == 0:
        raise ValueError("data is empty")
    if data.n_outputs != spec.n_margins:
        raise ValueError(
            f"data has {data.n_outputs} output column(s) but the model declares "
            f"{spec.n_margins} margin(s)"
        )
    predictors = []
    penalties = []
    offset = 0
    for name in spec.parameter_names():
        pspec = spec.predictor(name)
        cols = [np.ones((data.n_obs, 1))]
        exp_cols = [np.array([False])]
        terms = []
        local = 1
        for tspec in pspec.terms:
            block, D, grid, groups = _build_term(tspec, data)
            q = block.n_coef
            term = TermDesign(
                spec=tspec, block=block, local=slice(local, local + q), grid=grid, groups=groups
            )
            terms.append(term)
            cols.append(block.Z)
            exp_cols.append(np.full(q, term.is_sc))
            if D is not None:
                penalties.append(
                    PenaltyBlock(
                        parameter=name,
                        label=tspec.label,
                        sl=slice(offset + local, offset + local + q),
                        D=D,
                    )
                )
            local += q
        X = np.hstack(cols)
        predictors.append(
            PredictorDesign(
                name=name,
                offset=offset,
                X=X,
                exp_cols=np.concatenate(exp_cols),
                terms=terms,
            )
        )
        offset += X.shape[1]
    sd_y = np.maximum(np.std(data.y, axis=0), 1e-12)
    floor = np.log(np.maximum(SIGMA_MIN, SIGMA_V_FLOOR_FRAC * sd_y))
    return StackedModel(
        spec=spec,
        predictors=predictors,
        penalties=penalties,
        n_coef=offset,
        log_sigma_v_min=floor,
    )


# ---------------------------------------------------------------------------
# likelihood, gradient, Hessian


def _invalid_point(model: StackedModel, gamma: np.ndarray, eta: np.ndarray) -> bool:
    if not np.all(np.isfinite(eta)):
        return True
    for k, pd in enumerate(model.predictors):
        if pd.name.startswith("sigma"):
            col = eta[:, k]
            # sigma_v saturates at its noise floor instead of invalidating
            lo = -np.inf if pd.name.startswith("sigma_v") else _LOG_SIGMA_MIN
            if col.min() < lo or col.max() > _LOG_SIGMA_MAX:
                return True
        if pd.name == "delta" and np.max(np.abs(eta[:, k])) > ETA_DELTA_BOUND:
            return True
        if pd.exp_cols.any() and np.any(gamma[pd.sl][pd.exp_cols] > SC_RAW_BOUND):
            return True
    return False


def _margin_param_columns(spec: ModelSpec):
    """Column indices (mu, sigma_v, sigma_u) per margin in the eta matrix."""
    return [(3 * m, 3 * m + 1, 3 * m + 2) for m in range(spec.n_margins)]


def _sigma_v_from_eta(eta_sv, floor):
    """Smooth saturating link sqrt(floor^2 + exp(2 eta))."""
    return np.sqrt(floor * floor + np.exp(2.0 * eta_sv))


def _margin_params_at(spec: ModelSpec, eta: np.ndarray, m: int, sv_floor: np.ndarray):
    i_mu, i_sv, i_su = _margin_param_columns(spec)[m]
    return _margins.MarginParams(
        mu=eta[:, i_mu],
        sigma_v=_sigma_v_from_eta(eta[:, i_sv], sv_floor[m]),
        sigma_u=np.exp(eta[:, i_su]),
        s=spec.margins[m].sign,
    )


def _loglik_from_eta(spec: ModelSpec, y: np.ndarray, eta: np.ndarray, sv_floor: np.ndarray):
    """Unpenalized log-likelihood given the predictor matrix.

    Returns -inf when any single observation falls below ROW_LL_FLOOR.
    """
    total = 0.0
    F = []
    for m in range(spec.n_margins):
        p = _margin_params_at(spec, eta, m, sv_floor)
        lp = _margins.composed_logpdf(y[:, m], p)
        if lp.min() < ROW_LL_FLOOR:
            return -np.inf
        total += float(np.sum(lp))
        if spec.has_delta:
            F.append(np.clip(_margins.composed_cdf(y[:, m], p), W_EPS, 1.0 - W_EPS))
    if spec.has_delta:
        delta = _copula.clamp_delta(spec.copula, _copula.delta_from_eta(spec.copula, eta[:, -1]))
        logc = _copula.copula_logpdf(spec.copula, F[0], F[1], delta)
        if logc.min() < ROW_LL_FLOOR:
            return -np.inf
        total += float(np.sum(logc))
    return total


def _score_matrix(spec: ModelSpec, y: np.ndarray, eta: np.ndarray, sv_floor: np.ndarray) -> np.ndarray:
    """Per-observation derivative of the log-likelihood wrt each predictor.

    Rows where the sigma_v saturation or the CDF clamp is active contribute
    zero through the saturated path, consistent with the evaluated
    likelihood.
    """
    n, K = eta.shape
    u = np.zeros((n, K))
    params = []
    sv_weight = []
    cols = _margin_param_columns(spec)
    for m in range(spec.n_margins):
        i_mu, i_sv, i_su = cols[m]
        p = _margin_params_at(spec, eta, m, sv_floor)
        params.append(p)
        # d log sigma_v_eff / d eta for the saturating link
        sv_weight.append(np.exp(2.0 * eta[:, i_sv]) / (p.sigma_v * p.sigma_v))
        u[:, [i_mu, i_sv, i_su]] = _margins.logpdf_grad(y[:, m], p)
    if spec.has_delta:
        F, masks, dF = [], [], []
        for m, p in enumerate(params):
            Fraw = _margins.composed_cdf(y[:, m], p)
            masks.append((Fraw > W_EPS) & (Fraw < 1.0 - W_EPS))
            F.append(np.clip(Fraw, W_EPS, 1.0 - W_EPS))
            dF.append(_margins.cdf_grad(y[:, m], p))
        cg = _copula.copula_logpdf_grad(spec.copula, F[0], F[1], eta[:, -1])
        for m in range(spec.n_margins):
            i_mu, i_sv, i_su = cols[m]
            chain = cg[:, m] * masks[m]
            u[:, i_mu] += chain * dF[m][:, 0]
            u[:, i_sv] += chain * dF[m][:, 1]
            u[:, i_su] += chain * dF[m][:, 2]
        u[:, -1] = cg[:, 2]
    for m in range(spec.n_margins):
        u[:, cols[m][1]] *= sv_weight[m]
    return u


def penalized_loglik(model: StackedModel, data: PanelData, gamma=None, lam=None) -> float:
    """Joint penalized log-likelihood; -inf for invalid coefficient points."""
    gamma = model.gamma if gamma is None else np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(gamma)):
        return -np.inf
    eta = model.eta_matrix(gamma)
    if _invalid_point(model, gamma, eta):
        return -np.inf
    ll = _loglik_from_eta(model.spec, data.y, eta, np.exp(model.log_sigma_v_min))
    if not np.isfinite(ll):
        return -np.inf
    return ll - model.penalty_value(gamma, lam)


def loglik_unpenalized(model: StackedModel, data: PanelData, gamma=None) -> float:
    gamma = model.gamma if gamma is None else np.asarray(gamma, dtype=float)
    eta = model.eta_matrix(gamma)
    if _invalid_point(model, gamma, eta):
        return -np.inf
    return _loglik_from_eta(model.spec, data.y, eta, np.exp(model.log_sigma_v_min))


def penalized_grad(model: StackedModel, data: PanelData, gamma=None, lam=None) -> np.ndarray:
    """Analytic gradient of the penalized log-likelihood in gamma."""
    gamma = model.gamma if gamma is None else np.asarray(gamma, dtype=float)
    eta = model.eta_matrix(gamma)
    if _invalid_point(model, gamma, eta):
        raise ValueError("gradient requested at an invalid coefficient point")
    u = _score_matrix(model.spec, data.y, eta, np.exp(model.log_sigma_v_min))
    g = np.empty(model.n_coef)
    for k, pd in enumerate(model.predictors):
        g[pd.sl] = pd.jacobian(gamma[pd.sl]).T @ u[:, k]
    return g - model.penalty_grad(gamma, lam)


def penalized_hessian(
    model: StackedModel, data: PanelData, gamma=None, lam=None, rel_step=1e-5
) -> np.ndarray:
    """Hessian of the penalized log-likelihood.

    Central finite differences of the analytic per-observation score in
    predictor space, pushed through the exact coefficient Jacobians; the
    second-order term of the exp transform on shape-constrained blocks is
    added analytically. Symmetrized.
    """
    gamma = model.gamma if gamma is None else np.asarray(gamma, dtype=float)
    spec = model.spec
    eta0 = model.eta_matrix(gamma)
    if _invalid_point(model, gamma, eta0):
        raise ValueError("hessian requested at an invalid coefficient point")
    n, K = eta0.shape
    sv_floor = np.exp(model.log_sigma_v_min)
    u0 = _score_matrix(spec, data.y, eta0, sv_floor)
    W = np.empty((K, K, n))
    for l in range(K):
        h = rel_step * (1.0 + np.abs(eta0[:, l]))
        ep = eta0.copy()
        ep[:, l] = eta0[:, l] + h
        em = eta0.copy()
        em[:, l] = eta0[:, l] - h
        W[:, l, :] = (
            (_score_matrix(spec, data.y, ep, sv_floor) - _score_matrix(spec, data.y, em, sv_floor))
            / (2.0 * h[:, None])
        ).T
    W = 0.5 * (W + W.transpose(1, 0, 2))
    jac = [pd.jacobian(gamma[pd.sl]) for pd in model.predictors]
    H = np.zeros((model.n_coef, model.n_coef))
    for k, pk in enumerate(model.predictors):
        for l, pl in enumerate(model.predictors):
            if l < k:
                continue
            block = jac[k].T @ (W[k, l][:, None] * jac[l])
            H[pk.sl, pl.sl] = block
            if l != k:
                H[pl.sl, pk.sl] = block.T
    # exp-transform curvature: d2 eta / d raw_q^2 = X[:, q] * exp(raw_q)
    for k, pd in enumerate(model.predictors):
        if pd.exp_cols.any():
            idx = np.flatnonzero(pd.exp_cols) + pd.offset
            H[idx, idx] += (u0[:, k] @ jac[k])[pd.exp_cols]
    H -= model.S(lam)
    return 0.5 * (H + H.T)


def loglik_grad_hess(model: StackedModel, data: PanelData, gamma=None, lam=None):
    """(penalized ll, penalized grad, penalized Hessian, unpenalized g and H)."""
    gamma = model.gamma if gamma is None else np.asarray(gamma, dtype=float)
    lam = model.lam if lam is None else lam
    f = penalized_loglik(model, data, gamma, lam)
    g_pen = penalized_grad(model, data, gamma, lam)
    H_pen = penalized_hessian(model, data, gamma, lam)
    S = model.S(lam)
    return f, g_pen, H_pen, g_pen + model.penalty_grad(gamma, lam), H_pen + S


# ---------------------------------------------------------------------------
# prediction


def predict_eta(model: StackedModel, newdata: PanelData, gamma=None) -> np.ndarray:
    """Predictor matrix for new data (training covariate ranges enforced)."""
    gamma = model.gamma if gamma is None else np.asarray(gamma, dtype=float)
    cols = []
    for pd in model.predictors:
        X = np.ones((newdata.n_obs, pd.n_coef))
        for term in pd.terms:
            X[:, term.local] = term.design_at(newdata)
        cols.append(pd.eta(gamma[pd.sl], X=X))
    return np.column_stack(cols)


def predict_parameters(model: StackedModel, newdata: PanelData, gamma=None) -> dict:
    """Per-row distribution parameters on their natural scales."""
    eta = predict_eta(model, newdata, gamma)
    out = {}
    sv_floor = np.exp(model.log_sigma_v_min)
    for m, (i_mu, i_sv, i_su) in enumerate(_margin_param_columns(model.spec), start=1):
        out[f"mu{m}"] = eta[:, i_mu]
        out[f"sigma_v{m}"] = _sigma_v_from_eta(eta[:, i_sv], sv_floor[m - 1])
        out[f"sigma_u{m}"] = np.exp(eta[:, i_su])
    if model.spec.has_delta:
        out["eta_delta"] = eta[:, -1]
        out["delta"] = _copula.clamp_delta(
            model.spec.copula, _copula.delta_from_eta(model.spec.copula, eta[:, -1])
        )
    return out


def margin_efficiencies(spec: ModelSpec, params: dict, y: np.ndarray) -> dict:
    """Per-row conditional inefficiency/efficiency predictors per margin."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[0] == 1 and y.shape[1] != 1:
        y = y.T
    out = {}
    for m in range(1, spec.n_margins + 1):
        p = _margins.MarginParams(
            mu=params[f"mu{m}"],
            sigma_v=params[f"sigma_v{m}"],
            sigma_u=params[f"sigma_u{m}"],
            s=spec.margins[m - 1].sign,
        )
        out[f"jlms{m}"] = _margins.efficiency_jlms(y[:, m - 1], p)
        out[f"bc{m}"] = _margins.efficiency_bc(y[:, m - 1], p)
    return out


# ---------------------------------------------------------------------------
# (de)serialization of the fitted design for the CLI artifact


def _spec_to_dict(spec: ModelSpec) -> dict:
    def pred(ps):
        return [
            {
                "kind": t.kind,
                "covariate": t.covariate,
                "n_knots": t.n_knots,
                "degree": t.degree,
                "diff_order": t.diff_order,
                "x_range": list(t.x_range) if t.x_range else None,
            }
            for t in ps.terms
        ]

    return {
        "copula": spec.copula,
        "margins": [
            {
                "output": m.output,
                "sign": m.sign,
                "mu": pred(m.mu),
                "sigma_v": pred(m.sigma_v),
                "sigma_u": pred(m.sigma_u),
            }
            for m in spec.margins
        ],
        "delta": pred(spec.delta),
    }


def _pred_from_list(lst) -> PredictorSpec:
    terms = []
    for t in lst or []:
        terms.append(
            TermSpec(
                kind=t["kind"],
                covariate=t["covariate"],
                n_knots=int(t.get("n_knots", 10)),
                degree=int(t.get("degree", 3)),
                diff_order=int(t.get("diff_order", 2)),
                x_range=tuple(t["x_range"]) if t.get("x_range") else None,
            )
        )
    return PredictorSpec(tuple(terms))


def _spec_from_dict(d: dict) -> ModelSpec:
    margins = []
    for m in d["margins"]:
        margins.append(
            MarginSpec(
                output=m["output"],
                sign=int(m["sign"]),
                mu=_pred_from_list(m.get("mu")),
                sigma_v=_pred_from_list(m.get("sigma_v")),
                sigma_u=_pred_from_list(m.get("sigma_u")),
            )
        )
    return ModelSpec(
        margins=tuple(margins),
        copula=d.get("copula", "independence"),
        delta=_pred_from_list(d.get("delta")),
    )


def model_to_dict(model: StackedModel) -> dict:
    """JSON-serializable rebuild information (design matrices excluded)."""
    preds = []
    for pd in model.predictors:
        terms = []
        for t in pd.terms:
            blk = t.block
            terms.append(
                {
                    "kind": t.spec.kind,
                    "covariate": t.spec.covariate,
                    "n_knots": t.spec.n_knots,
                    "degree": t.spec.degree,
                    "diff_order": t.spec.diff_order,
                    "x_range": list(t.spec.x_range) if t.spec.x_range else None,
                    "local_start": t.local.start,
                    "n_coef": t.n_coef,
                    "knots": None if t.grid is None else t.grid.knots.tolist(),
                    "center_T": None if blk.center_T is None else blk.center_T.tolist(),
                    "center_means": None
                    if blk.center_means is None
                    else blk.center_means.tolist(),
                    "groups": None if t.groups is None else np.asarray(t.groups).tolist(),
                }
            )
        preds.append(
            {
                "name": pd.name,
                "offset": pd.offset,
                "n_coef": pd.n_coef,
                "exp_cols": pd.exp_cols.tolist(),
                "terms": terms,
            }
        )
    return {
        "spec": _spec_to_dict(model.spec),
        "n_coef": model.n_coef,
        "predictors": preds,
        "penalties": [
            {"parameter": pb.parameter, "label": pb.label, "start": pb.sl.start, "stop": pb.sl.stop}
            for pb in model.penalties
        ],
    }


def model_from_dict(d: dict) -> StackedModel:
    """Rebuild a prediction-capable model (training designs are not restored)."""
    spec = _spec_from_dict(d["spec"])
    predictors = []
    for pdd in d["predictors"]:
        terms = []
        for td in pdd["terms"]:
            tspec = TermSpec(
                kind=td["kind"],
                covariate=td["covariate"],
                n_knots=int(td["n_knots"]),
                degree=int(td["degree"]),
                diff_order=int(td["diff_order"]),
                x_range=tuple(td["x_range"]) if td.get("x_range") else None,
            )
            q = int(td["n_coef"])
            grid = None
            if td.get("knots") is not None:
                grid = KnotGrid(np.asarray(td["knots"], dtype=float), tspec.degree)
            if tspec.kind == "scspline":
                Q = grid.n_basis
                block = DesignBlock(
                    Z=np.zeros((1, q)),
                    D=np.zeros((q, q)),
                    transform="sc_monotone_concave",
                    Sigma=sc_transform_matrix(Q),
                    centered=True,
                    center_means=np.asarray(td["center_means"], dtype=float),
                )
            else:
                block = DesignBlock(
                    Z=np.zeros((1, q)),
                    D=np.zeros((q, q)),
                    centered=td.get("center_T") is not None,
                    center_T=None
                    if td.get("center_T") is None
                    else np.asarray(td["center_T"], dtype=float),
                )
            groups = None if td.get("groups") is None else np.asarray(td["groups"])
            terms.append(
                TermDesign(
                    spec=tspec,
                    block=block,
                    local=slice(td["local_start"], td["local_start"] + q),
                    grid=grid,
                    groups=groups,
                )
            )
        predictors.append(
            PredictorDesign(
                name=pdd["name"],
                offset=int(pdd["offset"]),
                X=None,
                exp_cols=np.asarray(pdd["exp_cols"], dtype=bool),
                terms=terms,
            )
        )
    return StackedModel(
        spec=spec, predictors=predictors, penalties=[], n_coef=int(d["n_coef"])
    )
