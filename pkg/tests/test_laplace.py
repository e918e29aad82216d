import math

import numpy as np
import pytest
from scipy.special import expit

from conftest import logistic_data, random_intercept_data
from fallrisk.exceptions import NotConverged
from fallrisk.glm_core import PriorSpec, Stage1Objective, log_joint_stage1
from fallrisk.laplace import (
    FitSettings,
    GridSettings,
    _conditional_fit,
    design_from_arrays,
    fit_map,
    fit_stage1,
    fit_stage2,
    lml_stage1,
    mixture_moments,
    posterior_summary,
)
from fallrisk.oracle import (
    box_bounds,
    golden_section_map,
    importance_lml_for_fit,
    quadrature_lml,
    stage1_log_joint_fn,
    stage2_log_joint_fn,
)
from fallrisk.predict import MCSettings, predict_stage2

PRIOR = PriorSpec()


def _quad_lml(X, y, fit, v0=1000.0, n_points=401):
    f = stage1_log_joint_fn(X, y, v0)
    return quadrature_lml(f, X.shape[1], box_bounds(fit.coef, fit.posterior_cov, 20), n_points)


def test_symmetric_intercept_map():
    y = np.array([0.0, 1.0] * 5)
    fit = fit_map(Stage1Objective(np.ones((10, 1)), y, PRIOR))
    assert fit.converged and abs(fit.x[0]) < 1e-6


def test_intercept_map_matches_golden_section():
    y = np.array([1.0] * 7 + [0.0] * 3)
    X = np.ones((10, 1))
    fit = fit_map(Stage1Objective(X, y, PRIOR))
    ref = golden_section_map(stage1_log_joint_fn(X, y, PRIOR.v0), bracket=(-5, 5))
    assert abs(fit.x[0] - ref) < 1e-4


def test_separated_data_converges():
    x = np.array([-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0])
    X = np.column_stack([np.ones(8), x, x**2])
    y = (x > 0).astype(float)
    fit = fit_map(Stage1Objective(X, y, PRIOR))
    assert fit.converged and np.all(np.isfinite(fit.x))


def test_intercept_only_lml_vs_quadrature():
    X, y = np.ones((20, 1)), np.array([1.0] * 6 + [0.0] * 14)
    fit = fit_stage1(design_from_arrays(np.zeros((20, 0)), y))
    assert abs(fit.lml - _quad_lml(X, y, fit).value) <= 0.05


def test_two_coefficient_lml_vs_quadrature():
    Z, y = logistic_data(8, 50, 1, coef=[1.0])
    fit = fit_stage1(design_from_arrays(Z, y))
    X = np.column_stack([np.ones(50), Z])
    assert abs(fit.lml - _quad_lml(X, y, fit).value) <= 0.1


def test_duplicating_rows():
    Z, y = logistic_data(2, 40, 2, coef=[0.8, -0.5])
    prior = PriorSpec(v0=1e12)
    once = fit_stage1(design_from_arrays(Z, y), prior)
    twice = fit_stage1(design_from_arrays(np.vstack([Z, Z]), np.concatenate([y, y])), prior)
    assert twice.lml < once.lml
    np.testing.assert_allclose(twice.coef, once.coef, atol=1e-6)


def test_permutation_and_determinism():
    Z, y = logistic_data(5, 60, 3, coef=[1.0, 0.0, -1.0])
    a = fit_stage1(design_from_arrays(Z, y))
    perm = np.random.default_rng(0).permutation(60)
    b = fit_stage1(design_from_arrays(Z[perm], y[perm]))
    c = fit_stage1(design_from_arrays(Z, y))
    assert abs(a.lml - b.lml) < 1e-10
    assert a.lml == c.lml and np.array_equal(a.coef, c.coef)


def test_posterior_cov_inverts_hessian():
    Z, y = logistic_data(6, 80, 2, coef=[0.5, 0.5])
    fit = fit_stage1(design_from_arrays(Z, y))
    X = np.column_stack([np.ones(80), Z])
    H = log_joint_stage1(fit.coef, X, y, PRIOR).hessian
    assert np.max(np.abs(-H @ fit.posterior_cov - np.eye(3))) <= 1e-8
    np.testing.assert_allclose(fit.posterior_cov, fit.posterior_cov.T, atol=0)


def test_lml_stage1_on_cohort(example_cohort):
    fit = lml_stage1(example_cohort, ["tinetti_gait"])
    assert fit.converged and fit.model == ["tinetti_gait"]
    assert [r["name"] for r in fit.to_dict()["coefficients"]] == ["(intercept)", "tinetti_gait"]


def test_conditional_lml_vs_quadrature():
    X = np.ones((6, 1))
    y = np.array([1.0, 0.0, 1.0, 0.0, 0.0, 1.0])
    g = np.array([0, 0, 0, 1, 1, 1])
    design = design_from_arrays(np.zeros((6, 0)), y, groups=g)
    for s2 in (0.3, 4.0):
        cond = _conditional_fit(design, PRIOR, s2, None, cluster_nodes=6)
        sd = math.sqrt(s2)
        ref = quadrature_lml(stage2_log_joint_fn(X, y, g, PRIOR.v0, s2), 3,
                             [(-40, 40), (-14 * sd, 14 * sd), (-14 * sd, 14 * sd)], 161)
        assert abs(cond.lml - ref.value) < 0.05


def test_stage2_weights_normalized(small_stage2_cohort):
    from fallrisk.datamodel import encode

    fit = fit_stage2(encode(small_stage2_cohort, ["location"], stage=2))
    w = np.array([g.normalized_weight for g in fit.sigma2_grid])
    assert abs(w.sum() - 1.0) <= 1e-12
    assert fit.converged and np.isfinite(fit.lml)
    assert set(fit.to_dict()) >= {"model", "stage", "lml", "coefficients", "sigma2_grid"}


def test_stage2_one_fall_per_patient_is_finite():
    X, y, g = random_intercept_data(5, 20, 1, 1.0)
    fit = fit_stage2(design_from_arrays(X, y, groups=g))
    assert np.isfinite(fit.lml)


def test_stage2_small_case_vs_importance_sampling():
    rng = np.random.default_rng(0)
    g = np.repeat(np.arange(5), 2)
    y = (rng.random(10) < 0.5).astype(float)
    design = design_from_arrays(np.zeros((10, 0)), y, groups=g)
    fit = fit_stage2(design)
    oracle = importance_lml_for_fit(design, fit, PRIOR, n_samples=100_000, seed=0)
    assert abs(fit.lml - oracle.value) <= 0.3


@pytest.mark.parametrize("seed", range(3))
def test_stage2_zero_variance_truth(seed):
    X, y, g = random_intercept_data(seed, 30, 10, 0.0, coef=(1.0,))
    d2 = design_from_arrays(X, y, groups=g)
    fit2 = fit_stage2(d2)
    fit1 = fit_stage1(design_from_arrays(X, y))
    sigma2 = np.array([p.sigma2 for p in fit2.sigma2_grid])
    w = np.array([p.normalized_weight for p in fit2.sigma2_grid])
    assert w[sigma2 < 1.0].sum() >= 0.9
    p1 = expit(d2.X @ fit1.coef)
    p2 = predict_stage2(fit2, d2, mc=MCSettings(seed=1)).probabilities
    assert np.max(np.abs(p2 - p1)) <= 0.02


def test_joint_laplace_option_runs():
    X, y, g = random_intercept_data(1, 12, 3, 0.5)
    fit = fit_stage2(design_from_arrays(X, y, groups=g), grid=GridSettings(cluster_nodes=0))
    assert np.isfinite(fit.lml)


def test_summary_zero_coefficient():
    X, y = np.ones((4, 1)), np.array([0.0, 1.0, 0.0, 1.0])
    fit = fit_stage1(design_from_arrays(np.zeros((4, 0)), y))
    row = posterior_summary(fit)[0]
    assert row["or"] == pytest.approx(1.0, abs=1e-9)
    assert math.log(row["ci_high"]) == pytest.approx(-math.log(row["ci_low"]), abs=1e-8)


def test_summary_gait_shaped_interval():
    Z, y = logistic_data(0, 30, 1)
    fit = fit_stage1(design_from_arrays(Z, y))
    fit.map_estimate.coefficients[1] = -0.527
    fit.posterior_cov[1, 1] = 0.19**2
    row = posterior_summary(fit)[1]
    assert row["or"] == pytest.approx(0.59, abs=0.005)
    assert (row["ci_low"], row["ci_high"]) == pytest.approx((0.41, 0.86), abs=0.01)


def test_mixture_law_of_total_variance():
    mean, var = mixture_moments([0.5, 0.5], [[1.0], [-1.0]], [[0.0], [0.0]])
    assert mean[0] == 0.0 and math.sqrt(var[0]) == 1.0


def test_summary_requires_convergence():
    Z, y = logistic_data(0, 30, 1)
    fit = fit_stage1(design_from_arrays(Z, y), settings=FitSettings(max_iter=1))
    assert not fit.converged
    with pytest.raises(NotConverged):
        posterior_summary(fit)
