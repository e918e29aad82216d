"""scikit-learn style wrappers around the fitting, selection and averaging code.

These work on plain arrays: every column of ``X`` is one candidate
covariate and an intercept is added internally.
"""

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_fit_data, check_groups, check_predict_data
from .bma import NORMALIZED_MARGINAL, bma_predict, build_ensemble
from .glm_core import PriorSpec
from .laplace import FitSettings, GridSettings, design_from_arrays, fit_stage1, fit_stage2
from .predict import MCSettings, predict_stage1, predict_stage2
from .selection import forward_select


class _BinaryMixin:
    def predict(self, X, **kwargs):
        proba = self.predict_proba(X, **kwargs)[:, 1]
        return self.classes_[(proba >= self.threshold).astype(int)]


class BayesianLogisticRegression(_BinaryMixin, ClassifierMixin, BaseEstimator):
    """Fixed-effects logistic regression with a Gaussian prior, fitted at the
    posterior mode; ``lml_`` is the Laplace log marginal likelihood.

    Parameters
    ----------
    prior_v0 : float
        Prior variance of every coefficient, intercept included.
    threshold : float
        Probability cut-off used by :meth:`predict`.
    max_iter, tol : int, float
        Newton iteration cap and gradient tolerance.
    """

    def __init__(self, prior_v0=1000.0, threshold=0.5, max_iter=100, tol=1e-8):
        self.prior_v0 = prior_v0
        self.threshold = threshold
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X, y01, self.classes_ = check_fit_data(X, y)
        self.n_features_in_ = X.shape[1]
        design = design_from_arrays(X, y01)
        self.fit_ = fit_stage1(design, PriorSpec(v0=self.prior_v0),
                               FitSettings(max_iter=self.max_iter, grad_tol=self.tol))
        self.intercept_ = float(self.fit_.coef[0])
        self.coef_ = self.fit_.coef[1:].copy()
        self.lml_ = self.fit_.lml
        self.posterior_cov_ = self.fit_.posterior_cov
        return self

    def decision_function(self, X):
        check_is_fitted(self, "fit_")
        X = check_predict_data(X, self.n_features_in_)
        return self.intercept_ + X @ self.coef_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])


class RandomInterceptLogisticRegression(_BinaryMixin, ClassifierMixin, BaseEstimator):
    """Logistic regression with a Normal(0, sigma2) intercept per group and an
    Inverse-Gamma prior on sigma2, fitted by nested Laplace over a log-sigma2
    grid.

    ``predict_proba`` integrates over sigma2 and the group intercept by Monte
    Carlo; rows whose group was seen during ``fit`` use that group's
    estimated intercept, all others are treated as new groups.
    """

    def __init__(self, prior_v0=1000.0, prior_a=0.001, prior_b=0.001, threshold=0.5,
                 n_sigma2_draws=200, n_epsilon_draws=50, random_state=0, cluster_nodes=6):
        self.prior_v0 = prior_v0
        self.prior_a = prior_a
        self.prior_b = prior_b
        self.threshold = threshold
        self.n_sigma2_draws = n_sigma2_draws
        self.n_epsilon_draws = n_epsilon_draws
        self.random_state = random_state
        self.cluster_nodes = cluster_nodes

    def fit(self, X, y, groups=None):
        X, y01, self.classes_ = check_fit_data(X, y)
        if groups is None:
            raise ValueError("groups are required")
        groups = check_groups(groups, X.shape[0])
        self.n_features_in_ = X.shape[1]
        design = design_from_arrays(X, y01, groups=groups)
        prior = PriorSpec(v0=self.prior_v0, a=self.prior_a, b=self.prior_b)
        self.fit_ = fit_stage2(design, prior, GridSettings(cluster_nodes=self.cluster_nodes))
        self.intercept_ = float(self.fit_.coef[0])
        self.coef_ = self.fit_.coef[1:].copy()
        self.lml_ = self.fit_.lml
        self.sigma2_grid_ = np.array([g.sigma2 for g in self.fit_.sigma2_grid])
        self.sigma2_weights_ = np.array([g.normalized_weight for g in self.fit_.sigma2_grid])
        return self

    def predict_proba(self, X, groups=None):
        check_is_fitted(self, "fit_")
        X = check_predict_data(X, self.n_features_in_)
        n = X.shape[0]
        mc = MCSettings(self.n_sigma2_draws, self.n_epsilon_draws, int(self.random_state))
        known = np.zeros(n, dtype=bool)
        if groups is not None:
            groups = check_groups(groups, n)
            seen = set(self.fit_.group_ids)
            known = np.array([g in seen for g in groups])
        else:
            groups = np.full(n, None)
        p = np.empty(n)
        for flag in (False, True):
            rows = np.flatnonzero(known == flag)
            if rows.size == 0:
                continue
            design = design_from_arrays(X[rows], np.zeros(rows.size),
                                        groups=groups[rows] if flag else np.zeros(rows.size))
            design.row_ids = [f"row{r}" for r in rows]
            p[rows] = predict_stage2(self.fit_, design, patient_known=flag, mc=mc).probabilities
        return np.column_stack([1.0 - p, p])


class ForwardSelectionBMAClassifier(_BinaryMixin, ClassifierMixin, BaseEstimator):
    """Forward selection of columns on the log marginal likelihood, with
    predictions averaged over every model the search fitted.

    Attributes
    ----------
    trace_ : SelectionTrace
    ensemble_ : BmaEnsemble
    selected_features_ : list of int
        Column indices of the model chosen by the search.
    """

    def __init__(self, prior_v0=1000.0, weight_rule=NORMALIZED_MARGINAL, threshold=0.5,
                 use_bma=True):
        self.prior_v0 = prior_v0
        self.weight_rule = weight_rule
        self.threshold = threshold
        self.use_bma = use_bma

    def fit(self, X, y):
        X, y01, self.classes_ = check_fit_data(X, y)
        self.n_features_in_ = X.shape[1]
        design = design_from_arrays(X, y01)
        self.trace_ = forward_select(design, prior=PriorSpec(v0=self.prior_v0))
        self.ensemble_ = build_ensemble(self.trace_, self.weight_rule)
        names = design.variables
        self.selected_features_ = [names.index(v) for v in self.trace_.final_model]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "trace_")
        X = check_predict_data(X, self.n_features_in_)
        design = design_from_arrays(X, np.zeros(X.shape[0]))
        if self.use_bma:
            p = bma_predict(self.ensemble_, design, predict_stage1)
        else:
            fit = self.trace_.final_fit
            p = predict_stage1(fit, design.subset(fit.model)).probabilities
        return np.column_stack([1.0 - p, p])
