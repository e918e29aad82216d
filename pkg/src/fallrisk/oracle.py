"""Brute-force reference computations.

Nothing here reuses the numeric kernels of :mod:`fallrisk.glm_core` or
:mod:`fallrisk.laplace`: log densities are rebuilt from scipy primitives,
integrals are done by tensor-grid quadrature or Monte Carlo, and AUC by
counting pairs. The ``verify`` CLI command and the test suite compare the
main code paths against these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import stats
from scipy.optimize import minimize_scalar
from scipy.special import log_expit, logsumexp

from .exceptions import (
    BoundsTooNarrow,
    EffectiveSampleTooSmall,
    InvalidProposal,
    SingleClass,
)


@dataclass
class OracleResult:
    value: float
    error_estimate: float
    method: str
    settings: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Independent log densities (vectorized over rows of ``points``)
# ---------------------------------------------------------------------------


def stage1_log_joint_fn(X, y, v0):
    """Callable ``f(points) -> log p(y, beta)`` for points of shape (m, d)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    sd = math.sqrt(v0)

    def f(points):
        points = np.atleast_2d(points)
        out = np.empty(points.shape[0])
        for s in range(0, points.shape[0], 4096):
            chunk = points[s : s + 4096]
            eta = chunk @ X.T
            ll = (y * log_expit(eta) + (1.0 - y) * log_expit(-eta)).sum(axis=1)
            out[s : s + 4096] = ll + stats.norm.logpdf(chunk, scale=sd).sum(axis=1)
        return out

    return f


def stage2_log_joint_fn(X, y, groups, v0, sigma2):
    """Callable over points ``(alpha, eps)`` of the random-intercept model at fixed sigma2."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups)
    p = X.shape[1]
    sd, tau = math.sqrt(v0), math.sqrt(sigma2)

    def f(points):
        points = np.atleast_2d(points)
        alpha, eps = points[:, :p], points[:, p:]
        eta = alpha @ X.T + eps[:, groups]
        ll = (y * log_expit(eta) + (1.0 - y) * log_expit(-eta)).sum(axis=1)
        return (
            ll
            + stats.norm.logpdf(alpha, scale=sd).sum(axis=1)
            + stats.norm.logpdf(eps, scale=tau).sum(axis=1)
        )

    return f


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


def _trapezoid_log_integral(log_f, axes):
    """log of the tensor trapezoid integral of exp(log_f) over ``axes``."""
    log_w = np.zeros(log_f.shape)
    for k, ax in enumerate(axes):
        h = ax[1] - ax[0]
        w = np.full(ax.shape, h)
        w[0] = w[-1] = 0.5 * h
        shape = [1] * len(axes)
        shape[k] = ax.size
        log_w = log_w + np.log(w).reshape(shape)
    return float(logsumexp(log_f + log_w))


def quadrature_lml(objective, dim, bounds, n_points=201):
    """log of the integral of exp(objective) over a box, by tensor trapezoid.

    ``objective`` maps an (m, dim) array to m log densities. The error
    estimate compares the ``n_points`` grid with the grid of every other
    point. Raises :class:`BoundsTooNarrow` when the density on the box
    boundary exceeds 1e-12 of the peak.
    """
    if not 1 <= dim <= 3:
        raise ValueError(f"quadrature supports 1 <= dim <= 3, got {dim}")
    bounds = np.asarray(bounds, dtype=float).reshape(dim, 2)
    if n_points % 2 == 0:
        n_points += 1
    axes = [np.linspace(lo, hi, n_points) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    log_f = np.asarray(objective(points), dtype=float).reshape((n_points,) * dim)

    peak = np.max(log_f)
    boundary = -np.inf
    for k in range(dim):
        boundary = max(boundary, np.max(np.take(log_f, 0, axis=k)),
                       np.max(np.take(log_f, -1, axis=k)))
    if boundary - peak > math.log(1e-12):
        raise BoundsTooNarrow(
            f"boundary density is {math.exp(boundary - peak):.2e} of the peak"
        )

    fine = _trapezoid_log_integral(log_f, axes)
    coarse_idx = (slice(None, None, 2),) * dim
    coarse = _trapezoid_log_integral(log_f[coarse_idx], [ax[::2] for ax in axes])
    return OracleResult(
        value=fine,
        error_estimate=abs(fine - coarse),
        method="tensor-trapezoid",
        settings={"dim": dim, "n_points": n_points, "bounds": bounds.tolist()},
    )


def box_bounds(center, cov, width=10.0):
    """Box of ``width`` marginal standard deviations either side of ``center``."""
    center = np.asarray(center, dtype=float)
    sd = np.sqrt(np.diag(np.atleast_2d(cov)))
    return np.stack([center - width * sd, center + width * sd], axis=1)


def golden_section_map(log_density, bracket=(-50.0, 50.0)):
    """1-D posterior mode by golden-section search."""
    res = minimize_scalar(lambda b: -float(log_density(np.array([[b]]))[0]),
                          bracket=bracket, method="golden", tol=1e-12)
    return float(res.x)


# ---------------------------------------------------------------------------
# Importance sampling for the random-intercept model
# ---------------------------------------------------------------------------


_ORACLE_PANELS = np.array([0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0])


def _half_line_rule(n_nodes=5):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    lo, hi = _ORACLE_PANELS[:-1, None], _ORACLE_PANELS[1:, None]
    return ((hi - lo) / 2 * x + (hi + lo) / 2).ravel(), ((hi - lo) / 2 * w).ravel()


def _group_log_marginals(eta, y, onehot, sigma2, n_nodes=5, newton_iter=60, bisect_iter=10):
    """log prod_g int prod_{r in g} p(y_r | eta_r + e) N(e; 0, sigma2) de.

    ``eta`` has shape (m, n_rows) and ``sigma2`` shape (m,). Each (sample,
    patient) integrand is log-concave: it is split at its mode and each
    half-line is integrated with Gauss-Legendre panels measured in units of
    the distance where the log integrand has dropped by one (found by
    bisection; the rule is exact for any width, so a rough one suffices).
    """
    m = eta.shape[0]
    n_groups = onehot.shape[1]
    s2 = sigma2[:, None]
    sign = np.where(y > 0.5, 1.0, -1.0)
    row_group = onehot.argmax(axis=1)

    def log_g(e):
        return log_expit(sign * (eta + e[:, row_group])) @ onehot - 0.5 * e**2 / s2

    e = np.zeros((m, n_groups))
    for _ in range(newton_iter):
        prob = np.exp(log_expit(eta + e[:, row_group]))
        grad = (y - prob) @ onehot - e / s2
        curv = (prob * (1.0 - prob)) @ onehot + 1.0 / s2
        delta = np.clip(grad / curv, -2.0, 2.0)
        e = e + delta
        if np.max(np.abs(delta)) < 1e-9:
            break
    top = log_g(e)
    s_nodes, s_weights = _half_line_rule(n_nodes)
    total = []
    for direction in (-1.0, 1.0):
        lo = np.zeros_like(e)
        hi = np.sqrt(s2) * np.ones_like(e) + 1.0
        for _ in range(80):
            short = log_g(e + direction * hi) > top - 1.0
            if not short.any():
                break
            hi = np.where(short, 2.0 * hi, hi)
        for _ in range(bisect_iter):
            mid = 0.5 * (lo + hi)
            inside = log_g(e + direction * mid) > top - 1.0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        width = 0.5 * (lo + hi)
        for s, w in zip(s_nodes, s_weights):
            total.append(log_g(e + direction * width * s) + math.log(w) + np.log(width))
    log_int = logsumexp(np.stack(total, axis=2), axis=2) - 0.5 * np.log(2.0 * math.pi * s2)
    return log_int.sum(axis=1)


def importance_lml(X, y, groups, prior, location, scale, n_samples=100_000, seed=0,
                   sigma2=None, log_sigma2_envelope=None, df=5.0, inflate=1.5,
                   n_nodes=5, min_ess=100.0, proposal_grid=None):
    """Importance-sampling estimate of the random-intercept log marginal likelihood.

    The fixed coefficients are proposed from a multivariate t (``df``
    degrees of freedom) at ``location`` with shape ``inflate**2 * scale``.
    Unless ``sigma2`` is fixed, t = log sigma2 is proposed uniformly on
    ``log_sigma2_envelope``; with ``proposal_grid`` (a list of
    ``(t, location, scale)``) the coefficient proposal follows the entry
    nearest to each drawn t. Each patient's random intercept is integrated
    by deterministic quadrature, so only (alpha, t) are sampled.

    ``error_estimate`` is the delta-method standard error of the log
    estimate, sqrt(1/ESS - 1/n).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _, groups = np.unique(np.asarray(groups), return_inverse=True)
    n_groups = int(groups.max()) + 1
    onehot = np.zeros((groups.size, n_groups))
    onehot[np.arange(groups.size), groups] = 1.0
    rng = np.random.default_rng(seed)

    if proposal_grid is None:
        proposal_grid = [(0.0, location, scale)]
    grid_t = np.array([float(g[0]) for g in proposal_grid])
    proposals = []
    for _, loc, sc in proposal_grid:
        sc = np.atleast_2d(np.asarray(sc, dtype=float)) * inflate**2
        if not np.all(np.isfinite(sc)) or np.linalg.eigvalsh(sc).min() <= 0:
            raise InvalidProposal("proposal scale must be positive definite")
        proposals.append(stats.multivariate_t(loc=np.asarray(loc, dtype=float), shape=sc, df=df))

    if sigma2 is None:
        if log_sigma2_envelope is None:
            log_sigma2_envelope = (grid_t.min() - 1.0, grid_t.max() + 1.0) \
                if len(proposal_grid) > 1 else (-12.0, 5.0)
        t_lo, t_hi = log_sigma2_envelope
        t = rng.uniform(t_lo, t_hi, size=n_samples)
        s2 = np.exp(t)
        log_q_t = np.full(n_samples, -math.log(t_hi - t_lo))
        log_prior_t = stats.invgamma.logpdf(s2, prior.a, scale=prior.b) + t
        which = np.abs(t[:, None] - grid_t[None, :]).argmin(axis=1)
    else:
        s2 = np.full(n_samples, float(sigma2))
        log_q_t = log_prior_t = np.zeros(n_samples)
        which = np.zeros(n_samples, dtype=int)

    dim = X.shape[1]
    alpha = np.empty((n_samples, dim))
    log_q = log_q_t.copy()
    for j, prop in enumerate(proposals):
        idx = np.flatnonzero(which == j)
        if idx.size == 0:
            continue
        draws = np.asarray(prop.rvs(size=idx.size, random_state=rng), dtype=float)
        alpha[idx] = draws.reshape(idx.size, dim)
        log_q[idx] += np.atleast_1d(prop.logpdf(alpha[idx]))

    log_target = np.empty(n_samples)
    sd = math.sqrt(prior.v0)
    for s in range(0, n_samples, 2000):
        a = alpha[s : s + 2000]
        log_target[s : s + 2000] = (
            _group_log_marginals(a @ X.T, y, onehot, s2[s : s + 2000], n_nodes)
            + stats.norm.logpdf(a, scale=sd).sum(axis=1)
            + log_prior_t[s : s + 2000]
        )
    log_w = log_target - log_q
    log_mean = float(logsumexp(log_w) - math.log(n_samples))
    w = np.exp(log_w - log_w.max())
    ess = float(w.sum() ** 2 / np.sum(w**2))
    settings = {"n_samples": n_samples, "seed": seed, "df": df, "ess": ess,
                "n_nodes": n_nodes, "sigma2": sigma2,
                "log_sigma2_envelope": None if sigma2 is not None else list(log_sigma2_envelope)}
    if ess < min_ess:
        raise EffectiveSampleTooSmall(f"effective sample size {ess:.1f} < {min_ess}")
    return OracleResult(
        value=log_mean,
        error_estimate=math.sqrt(max(1.0 / ess - 1.0 / n_samples, 0.0)),
        method="importance-sampling",
        settings=settings,
    )


def importance_lml_for_fit(design, fit, prior, n_samples=100_000, seed=0, **kwargs):
    """:func:`importance_lml` with its proposal taken from a Stage-2 fit."""
    grid = [
        (math.log(g.sigma2), g.coef_mean, g.coef_cov) for g in fit.sigma2_grid
    ]
    p = design.X.shape[1]
    return importance_lml(
        design.X, design.y, design.groups, prior,
        fit.coef, fit.posterior_cov[:p, :p],
        n_samples=n_samples, seed=seed, proposal_grid=grid, **kwargs,
    )


# ---------------------------------------------------------------------------
# AUC by pair counting
# ---------------------------------------------------------------------------


def pair_count_auc(labels, scores):
    """Exact AUC: (#{pos > neg} + 1/2 #{pos == neg}) / (n_pos * n_neg)."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise SingleClass("both classes are needed for an AUC")
    if labels.size > 10000:
        raise ValueError("pair counting is limited to n <= 10000")
    greater = 0
    ties = 0
    for s in pos:
        greater += int(np.count_nonzero(s > neg))
        ties += int(np.count_nonzero(s == neg))
    denominator = 2 * pos.size * neg.size
    return OracleResult(
        value=(2 * greater + ties) / denominator,
        error_estimate=0.0,
        method="pair-count",
        settings={"n_pos": int(pos.size), "n_neg": int(neg.size),
                  "numerator": 2 * greater + ties, "denominator": denominator},
    )


# ---------------------------------------------------------------------------
# High-precision and finite-difference references
# ---------------------------------------------------------------------------


def mp_log_likelihood_stage1(beta, X, y, dps=50):
    """log prod_i p_i^y_i (1-p_i)^(1-y_i) evaluated with mpmath."""
    with mpmath.workdps(dps):
        total = mpmath.mpf(0)
        for row, yi in zip(np.asarray(X, dtype=float), np.asarray(y)):
            eta = mpmath.fsum(mpmath.mpf(float(a)) * mpmath.mpf(float(b))
                              for a, b in zip(row, beta))
            prob = 1 / (1 + mpmath.exp(-eta))
            total += mpmath.log(prob if yi == 1 else 1 - prob)
        return total


def mp_sigmoid(x, dps=50):
    with mpmath.workdps(dps):
        return 1 / (1 + mpmath.exp(-mpmath.mpf(float(x))))


def mp_log_inverse_gamma(sigma2, a, b, dps=50):
    with mpmath.workdps(dps):
        s, a, b = mpmath.mpf(sigma2), mpmath.mpf(a), mpmath.mpf(b)
        return a * mpmath.log(b) - mpmath.loggamma(a) - (a + 1) * mpmath.log(s) - b / s


def mp_softmax(values, dps=50):
    with mpmath.workdps(dps):
        vals = [mpmath.mpf(v) for v in values]
        top = max(vals)
        exps = [mpmath.exp(v - top) for v in vals]
        total = mpmath.fsum(exps)
        return [float(e / total) for e in exps]


def central_gradient(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def central_jacobian(g, x, h=1e-5):
    """Finite-difference Jacobian of a vector function (Hessian from a gradient)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(g(x + e)) - np.asarray(g(x - e))) / (2 * h))
    J = np.stack(cols, axis=1)
    return 0.5 * (J + J.T)


def relative_error(approx, exact):
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return float(np.max(np.abs(approx - exact)) / max(np.max(np.abs(exact)), 1.0))
