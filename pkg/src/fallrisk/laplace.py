"""MAP fitting and Laplace approximations of the log marginal likelihood.

Stage 1 uses a single Laplace approximation over the coefficients. Stage 2
uses a nested scheme: a Laplace approximation over (alpha, eps) conditional
on sigma2, integrated numerically over an adaptive grid in log sigma2.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import minimize_scalar
from scipy.special import expit, logsumexp

from .datamodel import DesignMatrix, encode
from .exceptions import GridDegenerate, NonFiniteObjective, NotConverged, SingularHessian
from .glm_core import (
    LOG_2PI,
    DenseFactor,
    LatentState,
    ObjectiveEval,
    PriorSpec,
    Stage1Objective,
    Stage2Objective,
    log_hyperprior_sigma2,
    softplus,
)

logger = logging.getLogger(__name__)

Z_975 = 1.959963984540054


@dataclass(frozen=True)
class FitSettings:
    max_iter: int = 100
    grad_tol: float = 1e-8
    max_halvings: int = 30


@dataclass(frozen=True)
class GridSettings:
    """Controls the log-sigma2 grid of the Stage-2 fit.

    The grid is centred on the mode of the log posterior of t = log sigma2
    and spans ``span_sd`` curvature standard deviations either side. A side
    whose end weight exceeds ``boundary_tol`` is doubled in extent, at most
    ``max_expansions`` times.

    With ``cluster_nodes > 1`` each patient's random intercept is integrated
    numerically (``cluster_nodes`` Gauss-Legendre nodes per panel, seven
    panels either side of the mode) and only the fixed coefficients get a
    Laplace approximation. ``cluster_nodes <= 1``
    gives the plain joint Laplace approximation over (alpha, eps).
    """

    n_points: int = 25
    span_sd: float = 5.0
    max_expansions: int = 3
    boundary_tol: float = 1e-3
    search_bounds: tuple = (-15.0, 10.0)
    curvature_step: float = 0.25
    kappa_bounds: tuple = (0.05, 3.0)
    t_limits: tuple = (-60.0, 60.0)
    # quadrature nodes per panel for each random intercept; <= 1 is joint Laplace
    cluster_nodes: int = 6

    def __post_init__(self):
        if self.n_points < 3 or self.n_points % 2 == 0:
            raise ValueError("n_points must be odd and >= 3")


@dataclass
class MapFit:
    x: np.ndarray
    evaluation: object
    converged: bool
    iterations: int
    factor: object


def fit_map(objective, initial=None, settings=None):
    """Damped Newton ascent on a concave log joint.

    Each Newton step is halved until the objective does not decrease (up to
    rounding). Returns a :class:`MapFit` whose ``converged`` flag means the
    gradient max-norm fell to ``settings.grad_tol``.
    """
    settings = settings or FitSettings()
    x = np.zeros(objective.dim) if initial is None else np.array(initial, dtype=float)
    ev = objective(x)
    if not np.isfinite(ev.value) or not np.all(np.isfinite(ev.gradient)):
        raise NonFiniteObjective("objective is not finite at the initial point")
    converged = False
    iterations = 0
    factor = objective.factor(ev)
    for iterations in range(settings.max_iter + 1):
        if np.max(np.abs(ev.gradient), initial=0.0) <= settings.grad_tol:
            converged = True
            break
        if iterations == settings.max_iter:
            break
        step = factor.solve(ev.gradient)
        slack = 1e-13 * max(1.0, abs(ev.value))
        t = 1.0
        for _ in range(settings.max_halvings + 1):
            candidate = x + t * step
            value = objective.value(candidate)
            if np.isfinite(value) and value >= ev.value - slack:
                break
            t *= 0.5
        else:
            logger.debug("step halving exhausted at iteration %d", iterations)
            break
        x = candidate
        ev = objective(x)
        if not np.isfinite(ev.value):
            raise NonFiniteObjective("objective became non-finite")
        factor = objective.factor(ev)
    return MapFit(x, ev, converged, iterations, factor)


@dataclass
class GridPoint:
    sigma2: float
    conditional_lml: float
    log_weight: float
    normalized_weight: float
    coef_mean: np.ndarray
    coef_cov: np.ndarray
    eps_mean: np.ndarray
    eps_var: np.ndarray
    converged: bool


@dataclass
class FitResult:
    """Outcome of a Laplace fit.

    ``posterior_cov`` is the inverse negative Hessian at ``map_estimate``.
    For Stage 2 both refer to the grid point of largest posterior weight;
    ``posterior_cov`` then covers the fixed coefficients only and the
    random intercepts are summarised per grid point in ``sigma2_grid``.
    """

    model: list
    stage: int
    column_names: list
    map_estimate: LatentState
    posterior_cov: np.ndarray
    lml: float
    converged: bool
    iterations: int
    sigma2_grid: list = field(default_factory=list)
    group_ids: list | None = None
    transforms: dict = field(default_factory=dict)

    @property
    def signature(self):
        from .selection import model_signature

        return model_signature(self.model, self.stage)

    @property
    def coef(self):
        return self.map_estimate.coefficients

    @property
    def n_coef(self):
        return len(self.column_names)

    def to_dict(self):
        out = {
            "model": list(self.model),
            "stage": self.stage,
            "lml": self.lml,
            "converged": self.converged,
            "iterations": self.iterations,
            "coefficients": posterior_summary(self, require_converged=False),
            "sigma2_grid": [
                {
                    "sigma2": g.sigma2,
                    "conditional_lml": g.conditional_lml,
                    "normalized_weight": g.normalized_weight,
                }
                for g in self.sigma2_grid
            ],
        }
        if self.stage == 2:
            out["sigma2_posterior_mean"] = sigma2_posterior_mean(self)
        return out

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def laplace_lml(value, logdet_neg_hessian, dim):
    return value + 0.5 * dim * LOG_2PI - 0.5 * logdet_neg_hessian


# ---------------------------------------------------------------------------
# Stage 1
# ---------------------------------------------------------------------------


def fit_stage1(design, prior=None, settings=None):
    """Laplace fit of a fixed-effects logistic model on a :class:`DesignMatrix`."""
    prior = prior or PriorSpec()
    objective = Stage1Objective(design.X, design.y, prior)
    fit = fit_map(objective, None, settings)
    lml = laplace_lml(fit.evaluation.value, fit.factor.logdet(), objective.dim)
    return FitResult(
        model=design.variables,
        stage=1,
        column_names=list(design.column_names),
        map_estimate=LatentState(fit.x.copy()),
        posterior_cov=fit.factor.inverse(),
        lml=float(lml),
        converged=fit.converged,
        iterations=fit.iterations,
        transforms=dict(design.transforms),
    )


def lml_stage1(dataset, variable_subset=(), prior=None, settings=None, standardize=False):
    """Laplace log marginal likelihood of a Stage-1 model on a cohort."""
    design = encode(dataset, variable_subset, stage=1, standardize=standardize)
    return fit_stage1(design, prior, settings)


# ---------------------------------------------------------------------------
# Stage 2
# ---------------------------------------------------------------------------


@dataclass
class _Conditional:
    sigma2: float
    lml: float
    fit: MapFit
    coef_mean: np.ndarray
    coef_cov: np.ndarray
    eps_mean: np.ndarray
    eps_var: np.ndarray


# panel edges (in units of a side's e-fold width) for the per-patient rule
_PANEL_EDGES = np.array([0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 40.0])


def _side_rule(n_nodes):
    x, w = leggauss(n_nodes)
    lo, hi = _PANEL_EDGES[:-1, None], _PANEL_EDGES[1:, None]
    s = 0.5 * (hi - lo) * x[None, :] + 0.5 * (hi + lo)
    return s.ravel(), (0.5 * (hi - lo) * w[None, :]).ravel()


class IntegratedObjective:
    """Log joint of the fixed coefficients with every random intercept
    integrated out numerically at fixed sigma2.

    Each patient's integrand in eps is log-concave. It is split at its mode
    and each side is integrated by composite Gauss-Legendre panels scaled
    to the distance over which the log integrand drops by one, which copes
    with the lopsided shapes seen when all of a patient's falls share an
    outcome and sigma2 is large. The gradient is the exact derivative of
    the rule and :meth:`hessian` its central difference. Search directions
    use a cheaper curvature unless ``exact_hessian`` is set.
    """

    def __init__(self, design, prior, sigma2, n_nodes, eps_start=None):
        self.X, self.y, self.groups = design.X, design.y, design.groups
        self.n_groups = design.n_groups
        self.prior, self.sigma2 = prior, float(sigma2)
        s, w = _side_rule(n_nodes)
        self.offsets = np.concatenate([-s[::-1], s])
        self.log_w = np.log(np.concatenate([w[::-1], w]))
        self._eps = (np.zeros(self.n_groups) if eps_start is None
                     else np.array(eps_start, dtype=float))
        self.exact_hessian = False
        self._onehot = np.zeros((self.n_groups, self.groups.size))
        self._onehot[self.groups, np.arange(self.groups.size)] = 1.0

    @property
    def dim(self):
        return self.X.shape[1]

    def _gsum(self, values):
        return np.bincount(self.groups, weights=values, minlength=self.n_groups)

    def _log_g(self, eta, e):
        z = eta + e[self.groups]
        ll = -softplus(np.where(self.y > 0.5, -z, z))
        return self._gsum(ll) - 0.5 * e**2 / self.sigma2

    def _slope(self, eta, e):
        mu = expit(eta + e[self.groups])
        return self._gsum(self.y - mu) - e / self.sigma2, mu

    def _eps_mode(self, eta):
        e = self._eps.copy()
        for _ in range(100):
            grad, mu = self._slope(eta, e)
            curv = self._gsum(mu * (1.0 - mu)) + 1.0 / self.sigma2
            delta = np.clip(grad / curv, -2.0, 2.0)
            e += delta
            if np.max(np.abs(delta)) < 1e-10:
                break
        _, mu = self._slope(eta, e)
        return e, self._gsum(mu * (1.0 - mu)) + 1.0 / self.sigma2

    def _width(self, eta, e, top, curv, sign):
        # distance from the mode at which log g has dropped by one
        d = np.sqrt(2.0 / curv)
        for _ in range(60):
            above = self._log_g(eta, e + sign * d) - top + 1.0 > 0
            if not above.any():
                break
            d = np.where(above, 4.0 * d, d)
        # concave and past the root: Newton decreases monotonically onto it
        for _ in range(100):
            phi = self._log_g(eta, e + sign * d) - top + 1.0
            slope = sign * self._slope(eta, e + sign * d)[0]
            step = np.where(slope < 0, phi / np.where(slope < 0, slope, -1.0), 0.0)
            d = np.maximum(d - step, 0.5 * d)
            if np.max(np.abs(phi)) < 1e-9:
                break
        return d

    def _quadrature(self, alpha, with_grad=False):
        eta = self.X @ alpha
        e, curv = self._eps_mode(eta)
        self._eps = e
        top = self._log_g(eta, e)
        half = self.offsets.size // 2
        w_left = self._width(eta, e, top, curv, -1.0)
        w_right = self._width(eta, e, top, curv, 1.0)
        width = np.concatenate([np.repeat(w_left[:, None], half, 1),
                                np.repeat(w_right[:, None], half, 1)], axis=1)
        nodes_e = e[:, None] + width * self.offsets[None, :]  # (g, k)
        z = eta[:, None] + nodes_e[self.groups]  # (n, k)
        ll = -softplus(np.where(self.y[:, None] > 0.5, -z, z))
        per_group = self._onehot @ ll
        log_f = per_group - 0.5 * nodes_e**2 / self.sigma2 + self.log_w + np.log(width)
        log_i = logsumexp(log_f, axis=1)
        post = np.exp(log_f - log_i[:, None])
        log_i -= 0.5 * (LOG_2PI + math.log(self.sigma2))
        if not with_grad:
            return post, log_i, nodes_e, None
        # exact derivative of the rule, including the motion of the mode and
        # of both side widths with alpha (implicit differentiation)
        X, y, oh, s2 = self.X, self.y, self._onehot, self.sigma2
        n, k = z.shape

        def f_alpha(resid):
            return oh @ (resid[:, :, None] * X[:, None, :]).reshape(n, -1)

        mu_m = expit(eta + e[self.groups])
        fa_m = oh @ ((y - mu_m)[:, None] * X)
        dm = -(oh @ ((mu_m * (1.0 - mu_m))[:, None] * X)) / curv[:, None]
        dw = []
        for sign, w in ((-1.0, w_left), (1.0, w_right)):
            a = e + sign * w
            mu_a = expit(eta + a[self.groups])
            fe_a = oh @ (y - mu_a) - a / s2
            fa_a = oh @ ((y - mu_a)[:, None] * X)
            dw.append(-sign * (fa_a - fa_m + fe_a[:, None] * dm) / fe_a[:, None])
        mu = expit(z)
        fa = f_alpha(y[:, None] - mu).reshape(self.n_groups, k, -1)
        fe = oh @ (y[:, None] - mu) - nodes_e / s2
        dw_nodes = np.concatenate([np.repeat(dw[0][:, None, :], half, 1),
                                   np.repeat(dw[1][:, None, :], half, 1)], axis=1)
        d_node = dm[:, None, :] + self.offsets[None, :, None] * dw_nodes
        dlog = dw_nodes / width[:, :, None] + fa + fe[:, :, None] * d_node
        grad = np.einsum("gk,gkp->p", post, dlog)
        # cheap curvature for search directions: posterior expectation of the
        # conditional Hessian plus the spread of the conditional score
        curv_rows = np.sum(post[self.groups] * mu * (1.0 - mu), axis=1)
        mean_fa = np.einsum("gk,gkp->gp", post, fa)
        approx = (-(X.T * curv_rows) @ X + np.einsum("gk,gkp,gkq->pq", post, fa, fa)
                  - mean_fa.T @ mean_fa)
        self._approx_hessian = 0.5 * (approx + approx.T)
        return post, log_i, nodes_e, grad

    def _log_prior(self, alpha):
        v0 = self.prior.v0
        return -0.5 * float(alpha @ alpha) / v0 - 0.5 * alpha.size * (LOG_2PI + math.log(v0))

    def value(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        return float(np.sum(self._quadrature(alpha)[1])) + self._log_prior(alpha)

    def gradient(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        return self._quadrature(alpha, with_grad=True)[3] - alpha / self.prior.v0

    def __call__(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        _, log_i, _, grad = self._quadrature(alpha, with_grad=True)
        value = float(np.sum(log_i)) + self._log_prior(alpha)
        grad = grad - alpha / self.prior.v0
        if self.exact_hessian:
            hess = self.hessian(alpha)
        else:
            hess = self._approx_hessian - np.eye(alpha.size) / self.prior.v0
        return ObjectiveEval(value, grad, hess)

    def hessian(self, alpha):
        """Central differences of the exact gradient."""
        alpha = np.asarray(alpha, dtype=float)
        hess = np.empty((alpha.size, alpha.size))
        for j in range(alpha.size):
            h = 1e-4 * max(1.0, abs(alpha[j]))
            step = np.zeros(alpha.size)
            step[j] = h
            hess[:, j] = (self.gradient(alpha + step) - self.gradient(alpha - step)) / (2 * h)
        self._quadrature(alpha)  # restore the warm start at alpha
        return 0.5 * (hess + hess.T)

    def factor(self, ev):
        try:
            return DenseFactor(-ev.hessian)
        except SingularHessian:
            vals, vecs = np.linalg.eigh(-ev.hessian)
            vals = np.maximum(vals, 1.0 / self.prior.v0)
            return DenseFactor((vecs * vals) @ vecs.T)


def _conditional_fit(design, prior, sigma2, settings, cluster_nodes=0):
    objective = Stage2Objective(
        design.X, design.y, design.groups, design.n_groups, prior, sigma2
    )
    fit = fit_map(objective, None, settings)
    p = objective.p
    if cluster_nodes <= 1:
        lml = laplace_lml(fit.evaluation.value, fit.factor.logdet(), objective.dim)
        return _Conditional(sigma2, float(lml), fit, fit.x[:p].copy(),
                            fit.factor.alpha_cov(), fit.x[p:].copy(), fit.factor.eps_moments())
    inner = IntegratedObjective(design, prior, sigma2, cluster_nodes, eps_start=fit.x[p:])
    quick = dataclasses.replace(settings or FitSettings(), max_iter=15)
    nested = fit_map(inner, fit.x[:p], quick)
    if not nested.converged:
        # the cheap curvature can mislead where sigma2 is large
        inner.exact_hessian = True
        nested = fit_map(inner, nested.x, settings)
    factor = DenseFactor(-inner.hessian(nested.x))
    lml = laplace_lml(nested.evaluation.value, factor.logdet(), p)
    post, _, nodes_e, _ = inner._quadrature(nested.x)
    eps_mean = np.sum(post * nodes_e, axis=1)
    # conditional spread of eps plus the part propagated from alpha
    eps_var = np.sum(post * nodes_e**2, axis=1) - eps_mean**2
    eps_var += fit.factor.eps_moments() - 1.0 / fit.factor.D
    converged = fit.converged and nested.converged
    cond_fit = MapFit(np.concatenate([nested.x, eps_mean]), fit.evaluation, converged,
                      fit.iterations + nested.iterations, fit.factor)
    return _Conditional(sigma2, float(lml), cond_fit, nested.x.copy(), factor.inverse(),
                        eps_mean, eps_var)


def _log_post_t(cond, t, prior):
    # density of t = log sigma2 carries the Jacobian sigma2 = e^t
    return cond.lml + log_hyperprior_sigma2(cond.sigma2, prior) + t


def fit_stage2(design, prior=None, grid=None, settings=None):
    """Nested Laplace fit of the random-intercept model.

    The conditional Laplace lml is evaluated on a log-sigma2 grid and
    combined with trapezoid weights in t = log sigma2 (equivalently weights
    ``sigma2 * dt`` in sigma2) together with the Inverse-Gamma hyperprior.
    """
    prior = prior or PriorSpec()
    grid = grid or GridSettings()
    if design.stage != 2 or design.groups is None:
        raise ValueError("fit_stage2 needs a Stage-2 design")
    if design.n_rows == 0:
        raise ValueError("Stage-2 fit needs at least one fall event")

    cache = {}

    def h(t):
        t = float(t)
        if t not in cache:
            cache[t] = _conditional_fit(design, prior, math.exp(t), settings, grid.cluster_nodes)
        return _log_post_t(cache[t], t, prior)

    lo, hi = grid.search_bounds
    res = minimize_scalar(lambda t: -h(t), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-3})
    mode = float(res.x)
    d = grid.curvature_step
    curv = (h(mode + d) - 2.0 * h(mode) + h(mode - d)) / d**2
    kmin, kmax = grid.kappa_bounds
    kappa = kmax if not (curv < 0) else min(max(1.0 / math.sqrt(-curv), kmin), kmax)

    half = (grid.n_points - 1) // 2
    step = grid.span_sd * kappa / half
    left = right = half
    tmin, tmax = grid.t_limits
    for expansion in range(grid.max_expansions + 1):
        ts = mode + step * np.arange(-left, right + 1)
        ts = ts[(ts >= tmin) & (ts <= tmax)]
        log_post = np.array([h(t) for t in ts])
        trap = np.full(ts.shape, step)
        trap[0] = trap[-1] = 0.5 * step
        log_w = log_post + np.log(trap)
        lml = float(logsumexp(log_w))
        weights = np.exp(log_w - lml)
        logger.debug("sigma2 grid: mode %.3f kappa %.3f t in [%.2f, %.2f], end weights %.2e %.2e",
                     mode, kappa, ts[0], ts[-1], weights[0], weights[-1])
        # a side already at the hard t limit is accepted as is
        grow_left = weights[0] > grid.boundary_tol and ts[0] - step >= tmin
        grow_right = weights[-1] > grid.boundary_tol and ts[-1] + step <= tmax
        if not (grow_left or grow_right):
            break
        if expansion == grid.max_expansions:
            raise GridDegenerate(
                f"posterior mass on the sigma2 grid boundary "
                f"(end weights {weights[0]:.2e}, {weights[-1]:.2e})"
            )
        left += left if grow_left else 0
        right += right if grow_right else 0

    points = []
    p = design.X.shape[1]
    for t, lw, wt in zip(ts, log_w, weights):
        cond = cache[float(t)]
        points.append(
            GridPoint(
                sigma2=cond.sigma2,
                conditional_lml=cond.lml,
                log_weight=float(lw),
                normalized_weight=float(wt),
                coef_mean=cond.coef_mean,
                coef_cov=cond.coef_cov,
                eps_mean=cond.eps_mean,
                eps_var=cond.eps_var,
                converged=cond.fit.converged,
            )
        )
    best = int(np.argmax(weights))
    best_fit = cache[float(ts[best])].fit
    return FitResult(
        model=design.variables,
        stage=2,
        column_names=list(design.column_names),
        map_estimate=LatentState(
            best_fit.x[:p].copy(), best_fit.x[p:].copy(), points[best].sigma2
        ),
        posterior_cov=points[best].coef_cov,
        lml=lml,
        converged=all(g.converged for g in points),
        iterations=sum(cache[float(t)].fit.iterations for t in ts),
        sigma2_grid=points,
        group_ids=list(design.group_ids),
        transforms=dict(design.transforms),
    )


def lml_stage2(dataset, baseline_subset=(), perfall_subset=(), prior=None, grid_settings=None,
               settings=None, standardize=False):
    """Nested-Laplace log marginal likelihood of a Stage-2 model on a cohort."""
    if dataset.n_falls == 0:
        raise ValueError("Stage-2 fit needs at least one fall event")
    variables = list(baseline_subset) + list(perfall_subset)
    design = encode(dataset, variables, stage=2, standardize=standardize)
    return fit_stage2(design, prior, grid_settings, settings)


def fit_design(design, prior=None, settings=None, grid=None):
    """Dispatch on the design's stage."""
    if design.stage == 1:
        return fit_stage1(design, prior, settings)
    return fit_stage2(design, prior, grid, settings)


# ---------------------------------------------------------------------------
# Posterior summaries
# ---------------------------------------------------------------------------


def coefficient_moments(fit):
    """Posterior mean and variance of the fixed coefficients.

    Stage-2 moments mix over the sigma2 grid (law of total variance).
    """
    if fit.stage == 1 or not fit.sigma2_grid:
        p = fit.n_coef
        return fit.coef.copy(), np.diag(fit.posterior_cov)[:p].copy()
    w = np.array([g.normalized_weight for g in fit.sigma2_grid])
    means = np.array([g.coef_mean for g in fit.sigma2_grid])
    variances = np.array([np.diag(g.coef_cov) for g in fit.sigma2_grid])
    return mixture_moments(w, means, variances)


def mixture_moments(weights, means, variances):
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    mean = weights @ means
    second = weights @ (variances + means**2)
    return mean, np.maximum(second - mean**2, 0.0)


def sigma2_posterior_mean(fit):
    return float(sum(g.normalized_weight * g.sigma2 for g in fit.sigma2_grid))


def posterior_summary(fit, require_converged=True):
    """Per-coefficient mean, sd, odds ratio and 95% credible interval."""
    if require_converged and not fit.converged:
        raise NotConverged("posterior summary requested for a non-converged fit")
    mean, var = coefficient_moments(fit)
    sd = np.sqrt(var)
    rows = []
    for name, m, s in zip(fit.column_names, mean, sd):
        rows.append(
            {
                "name": name,
                "mean": float(m),
                "sd": float(s),
                "or": float(np.exp(m)),
                "ci_low": float(np.exp(m - Z_975 * s)),
                "ci_high": float(np.exp(m + Z_975 * s)),
            }
        )
    return rows


def render_summary(fit):
    """Fixed-width coefficient table."""
    lines = [f"stage {fit.stage}  model: {', '.join(fit.model) or '(intercept only)'}",
             f"log marginal likelihood: {fit.lml:.4f}"]
    if fit.stage == 2:
        lines.append(f"posterior mean sigma2: {sigma2_posterior_mean(fit):.4g}")
    lines.append(f"{'term':<32}{'mean':>10}{'sd':>10}{'OR':>10}{'95% CI':>22}")
    for row in posterior_summary(fit, require_converged=False):
        ci = f"({row['ci_low']:.3g}, {row['ci_high']:.3g})"
        lines.append(
            f"{row['name']:<32}{row['mean']:>10.4f}{row['sd']:>10.4f}{row['or']:>10.3f}{ci:>22}"
        )
    return "\n".join(lines)


def design_from_arrays(X, y, groups=None, column_names=None, add_intercept=True,
                       variables=None):
    """Build a :class:`DesignMatrix` from plain arrays.

    Each non-intercept column is its own variable unless ``variables`` maps
    variable names to column-index lists.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if column_names is None:
        column_names = [f"x{j}" for j in range(k)]
    column_names = [str(c) for c in column_names]
    if variables is None:
        variables = {name: [j] for j, name in enumerate(column_names)}
    order = []
    blocks = {}
    width = 1 if add_intercept else 0
    names = ["(intercept)"] if add_intercept else []
    for var, cols in variables.items():
        cols = list(cols)
        order.extend(cols)
        blocks[var] = slice(width, width + len(cols))
        names.extend(column_names[c] for c in cols)
        width += len(cols)
    parts = [np.ones((n, 1))] if add_intercept else []
    parts.append(X[:, order])
    if groups is not None:
        group_ids, inverse = np.unique(np.asarray(groups), return_inverse=True)
        groups_idx = inverse.astype(np.intp)
        group_ids = list(group_ids)
        stage = 2
    else:
        groups_idx = group_ids = None
        stage = 1
    return DesignMatrix(
        X=np.hstack(parts),
        y=y,
        column_names=names,
        blocks=blocks,
        stage=stage,
        row_ids=[str(i) for i in range(n)],
        groups=groups_idx,
        group_ids=group_ids,
    )
