"""Bayesian logistic regression for falls and injurious falls.

Laplace and nested-Laplace marginal likelihoods, forward selection on the
log marginal likelihood, Bayesian model averaging, Monte Carlo prediction
and leave-one-out evaluation.
"""

from .bma import build_ensemble, bma_predict, ensemble_weights
from .datamodel import CohortDataset, CovariateSchema, encode, load_csv, load_schema, summarize
from .estimators import (
    BayesianLogisticRegression,
    ForwardSelectionBMAClassifier,
    RandomInterceptLogisticRegression,
)
from .evaluate import choose_threshold, confusion_metrics, loo_cv, roc_auc
from .glm_core import PriorSpec
from .laplace import fit_stage1, fit_stage2, lml_stage1, lml_stage2, posterior_summary
from .predict import MCSettings, predict_stage1, predict_stage2
from .selection import forward_select, model_signature
from .simulate import load_example_cohort, simulate

__version__ = "0.1.0"

__all__ = [
    "BayesianLogisticRegression",
    "CohortDataset",
    "CovariateSchema",
    "ForwardSelectionBMAClassifier",
    "MCSettings",
    "PriorSpec",
    "RandomInterceptLogisticRegression",
    "bma_predict",
    "build_ensemble",
    "choose_threshold",
    "confusion_metrics",
    "encode",
    "ensemble_weights",
    "fit_stage1",
    "fit_stage2",
    "forward_select",
    "lml_stage1",
    "lml_stage2",
    "load_csv",
    "load_example_cohort",
    "load_schema",
    "loo_cv",
    "model_signature",
    "posterior_summary",
    "predict_stage1",
    "predict_stage2",
    "roc_auc",
    "simulate",
    "summarize",
]
