"""Bernoulli-logit likelihoods, priors and their derivatives.

Stage 1 is a fixed-effects logistic regression. Stage 2 adds a Gaussian
random intercept per patient; its variance ``sigma2`` is a conditioning
argument here and is integrated out in :mod:`fallrisk.laplace`.

The latent vector of the Stage-2 objective is ``concat(alpha, eps)``: the
fixed coefficients followed by one random intercept per group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import expit, gammaln

from .exceptions import DimensionMismatch, NonpositiveSigma2, SingularHessian

LOG_2PI = math.log(2.0 * math.pi)
RIDGE = 1e-8


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian N(0, v0) on every coefficient, Inverse-Gamma(a, b) on sigma2."""

    v0: float = 1000.0
    a: float = 0.001
    b: float = 0.001

    def __post_init__(self):
        for name in ("v0", "a", "b"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"prior {name} must be positive and finite, got {value!r}")


@dataclass
class LatentState:
    coefficients: np.ndarray
    random_intercepts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma2: float | None = None

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        self.random_intercepts = np.asarray(self.random_intercepts, dtype=float)
        if self.random_intercepts.size and not (self.sigma2 is not None and self.sigma2 > 0):
            raise NonpositiveSigma2("random intercepts require sigma2 > 0")

    @property
    def vector(self):
        return np.concatenate([self.coefficients, self.random_intercepts])


@dataclass
class ObjectiveEval:
    """Log joint density with its gradient and (dense, symmetric) Hessian."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    # Stage-2 blocks of the negative Hessian: A (dense), B (coupling), D (diagonal)
    blocks: tuple | None = None


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _bernoulli_loglik(eta, y):
    # y*eta - log(1+e^eta) == -softplus(-eta) for y=1 and -softplus(eta) for y=0
    return -float(np.sum(softplus(np.where(y > 0.5, -eta, eta))))


def _check_design(beta, design, y):
    beta = np.asarray(beta, dtype=float)
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2 or beta.ndim != 1 or y.ndim != 1:
        raise DimensionMismatch("expected design (n, d), coefficients (d,), outcomes (n,)")
    if design.shape[1] != beta.shape[0]:
        raise DimensionMismatch(
            f"design has {design.shape[1]} columns but {beta.shape[0]} coefficients"
        )
    if design.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"design has {design.shape[0]} rows but {y.shape[0]} outcomes")
    return beta, design, y


def log_normal_sum(x, var):
    """Sum of log N(x_k; 0, var) over the entries of x."""
    x = np.asarray(x, dtype=float)
    return -0.5 * x.size * (LOG_2PI + math.log(var)) - 0.5 * float(x @ x) / var


def log_likelihood_stage1(beta, design, y):
    """Bernoulli-logit log likelihood sum_i [y_i eta_i - log(1 + exp(eta_i))]."""
    beta, design, y = _check_design(beta, design, y)
    return _bernoulli_loglik(design @ beta, y)


def log_joint_stage1(beta, design, y, prior):
    """Log likelihood plus Gaussian coefficient prior, with derivatives."""
    beta, design, y = _check_design(beta, design, y)
    eta = design @ beta
    p = expit(eta)
    value = _bernoulli_loglik(eta, y) + log_normal_sum(beta, prior.v0)
    gradient = design.T @ (y - p) - beta / prior.v0
    w = p * (1.0 - p)
    hessian = -(design.T * w) @ design
    hessian[np.diag_indices_from(hessian)] -= 1.0 / prior.v0
    hessian = 0.5 * (hessian + hessian.T)
    return ObjectiveEval(value, gradient, hessian)


def _check_sigma2(sigma2):
    if not (sigma2 is not None and np.isfinite(sigma2) and sigma2 > 0):
        raise NonpositiveSigma2(f"sigma2 must be positive, got {sigma2!r}")


def log_joint_stage2_given_sigma2(latent, design, groups, y, prior, sigma2, n_groups=None):
    """Log joint of the random-intercept model at fixed ``sigma2``.

    Parameters
    ----------
    latent : LatentState or array
        Fixed coefficients ``alpha`` followed by random intercepts ``eps``.
        A flat array is split using the column count of ``design``.
    design : (n_rows, p) array
        Fixed-effects design (intercept, baseline and per-fall columns).
    groups : (n_rows,) int array
        Index into ``eps`` of the patient each row belongs to.
    y : (n_rows,) array of 0/1
    prior : PriorSpec
    sigma2 : float
        Random-intercept variance.
    n_groups : int, optional
        Length of ``eps``; defaults to ``groups.max() + 1``.

    Returns
    -------
    ObjectiveEval
        Value, gradient and Hessian over the joint (alpha, eps) vector. The
        negative Hessian is additionally exposed in block form
        ``(A, B, D)`` with ``D`` the diagonal of the eps block.
    """
    _check_sigma2(sigma2)
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups, dtype=np.intp)
    n_rows, p = design.shape
    if isinstance(latent, LatentState):
        alpha, eps = latent.coefficients, latent.random_intercepts
    else:
        x = np.asarray(latent, dtype=float)
        alpha, eps = x[:p], x[p:]
    if n_groups is None:
        n_groups = eps.shape[0]
    if alpha.shape[0] != p or eps.shape[0] != n_groups:
        raise DimensionMismatch(
            f"latent sizes ({alpha.shape[0]}, {eps.shape[0]}) do not match design ({p}, {n_groups})"
        )
    if y.shape[0] != n_rows or groups.shape[0] != n_rows:
        raise DimensionMismatch("design, outcomes and groups must have the same number of rows")
    if n_rows and (groups.min() < 0 or groups.max() >= n_groups):
        raise DimensionMismatch("group index out of range")

    eta = design @ alpha + eps[groups]
    prob = expit(eta)
    resid = y - prob
    w = prob * (1.0 - prob)

    value = (
        _bernoulli_loglik(eta, y)
        + log_normal_sum(alpha, prior.v0)
        + log_normal_sum(eps, sigma2)
    )
    grad_alpha = design.T @ resid - alpha / prior.v0
    grad_eps = np.bincount(groups, weights=resid, minlength=n_groups) - eps / sigma2

    A = (design.T * w) @ design
    A[np.diag_indices_from(A)] += 1.0 / prior.v0
    A = 0.5 * (A + A.T)
    B = np.empty((p, n_groups))
    for j in range(p):
        B[j] = np.bincount(groups, weights=w * design[:, j], minlength=n_groups)
    D = np.bincount(groups, weights=w, minlength=n_groups) + 1.0 / sigma2

    dim = p + n_groups
    hessian = np.zeros((dim, dim))
    hessian[:p, :p] = -A
    hessian[:p, p:] = -B
    hessian[p:, :p] = -B.T
    hessian[np.arange(p, dim), np.arange(p, dim)] = -D
    return ObjectiveEval(value, np.concatenate([grad_alpha, grad_eps]), hessian, (A, B, D))


def log_hyperprior_sigma2(sigma2, prior):
    """Inverse-Gamma(a, b) log density of sigma2."""
    _check_sigma2(sigma2)
    a, b = prior.a, prior.b
    return a * math.log(b) - float(gammaln(a)) - (a + 1.0) * math.log(sigma2) - b / sigma2


# ---------------------------------------------------------------------------
# Factorizations of the negative Hessian
# ---------------------------------------------------------------------------


class DenseFactor:
    """Cholesky factor of a symmetric positive definite matrix."""

    def __init__(self, matrix):
        self.dim = matrix.shape[0]
        try:
            self._cho = scipy.linalg.cho_factor(matrix, lower=True)
        except np.linalg.LinAlgError:
            try:
                self._cho = scipy.linalg.cho_factor(matrix + RIDGE * np.eye(self.dim), lower=True)
            except np.linalg.LinAlgError:
                raise SingularHessian("negative Hessian is not positive definite") from None

    def solve(self, rhs):
        return scipy.linalg.cho_solve(self._cho, rhs)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self._cho[0]))))

    def inverse(self):
        inv = self.solve(np.eye(self.dim))
        return 0.5 * (inv + inv.T)


class BlockFactor:
    """Factor of ``[[A, B], [B^T, diag(D)]]`` through the Schur complement.

    Cost is O(p^3 + n_groups * p^2) for p fixed coefficients.
    """

    def __init__(self, A, B, D):
        if np.any(D <= 0):
            D = D + RIDGE
        self.A, self.B, self.D = A, B, D
        self.p = A.shape[0]
        self.BDinv = B / D
        schur = A - self.BDinv @ B.T
        schur = 0.5 * (schur + schur.T)
        try:
            self._cho = scipy.linalg.cho_factor(schur, lower=True)
        except np.linalg.LinAlgError:
            D = D + RIDGE
            self.D = D
            self.BDinv = B / D
            schur = A + RIDGE * np.eye(self.p) - self.BDinv @ B.T
            try:
                self._cho = scipy.linalg.cho_factor(0.5 * (schur + schur.T), lower=True)
            except np.linalg.LinAlgError:
                raise SingularHessian("negative Hessian is not positive definite") from None

    @property
    def dim(self):
        return self.p + self.D.shape[0]

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        r_a, r_e = rhs[: self.p], rhs[self.p :]
        x_a = scipy.linalg.cho_solve(self._cho, r_a - self.BDinv @ r_e)
        x_e = (r_e - self.B.T @ x_a) / self.D
        return np.concatenate([x_a, x_e])

    def logdet(self):
        return float(np.sum(np.log(self.D))) + 2.0 * float(np.sum(np.log(np.diag(self._cho[0]))))

    def alpha_cov(self):
        inv = scipy.linalg.cho_solve(self._cho, np.eye(self.p))
        return 0.5 * (inv + inv.T)

    def eps_moments(self):
        """Diagonal of the eps block of the inverse."""
        M = scipy.linalg.cho_solve(self._cho, self.BDinv)
        return 1.0 / self.D + np.sum(self.BDinv * M, axis=0)

    def inverse(self):
        S_inv = self.alpha_cov()
        cross = -S_inv @ self.BDinv
        ee = np.diag(1.0 / self.D) + self.BDinv.T @ S_inv @ self.BDinv
        out = np.block([[S_inv, cross], [cross.T, ee]])
        return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# Objective objects consumed by the optimizer
# ---------------------------------------------------------------------------


class Stage1Objective:
    def __init__(self, X, y, prior):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.prior = prior
        _check_design(np.zeros(self.X.shape[1]), self.X, self.y)

    @property
    def dim(self):
        return self.X.shape[1]

    def __call__(self, x):
        return log_joint_stage1(x, self.X, self.y, self.prior)

    def value(self, x):
        return log_likelihood_stage1(x, self.X, self.y) + log_normal_sum(x, self.prior.v0)

    def factor(self, ev):
        return DenseFactor(-ev.hessian)


class Stage2Objective:
    def __init__(self, X, y, groups, n_groups, prior, sigma2):
        _check_sigma2(sigma2)
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.groups = np.asarray(groups, dtype=np.intp)
        self.n_groups = int(n_groups)
        self.prior = prior
        self.sigma2 = float(sigma2)

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def dim(self):
        return self.p + self.n_groups

    def __call__(self, x):
        return log_joint_stage2_given_sigma2(
            x, self.X, self.groups, self.y, self.prior, self.sigma2, self.n_groups
        )

    def value(self, x):
        alpha, eps = x[: self.p], x[self.p :]
        eta = self.X @ alpha + eps[self.groups]
        return (
            _bernoulli_loglik(eta, self.y)
            + log_normal_sum(alpha, self.prior.v0)
            + log_normal_sum(eps, self.sigma2)
        )

    def factor(self, ev):
        return BlockFactor(*ev.blocks)
