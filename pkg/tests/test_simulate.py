import numpy as np
import pytest
from scipy.special import expit

from fallrisk.datamodel import CONTINUOUS, CovariateSchema
from fallrisk.exceptions import InvalidConfig
from fallrisk.simulate import make_example_cohort, simulate

ONE_VAR = [CovariateSchema("x", CONTINUOUS).to_dict()]


def test_null_model_rate():
    ds = simulate({"seed": 1, "n_patients": 10_000, "schema": ONE_VAR})
    assert abs(ds.n_fallers / ds.n_patients - 0.5) <= 0.02


def test_rate_matches_monte_carlo():
    ds = simulate({"seed": 2, "n_patients": 10_000, "schema": ONE_VAR,
                   "stage1": {"intercept": -1.0, "coefficients": {"x": 2.0}}})
    z = np.random.default_rng(99).standard_normal(200_000)
    expected = expit(-1.0 + 2.0 * z).mean()
    assert abs(ds.n_fallers / ds.n_patients - expected) <= 0.01


def test_zero_sigma2_equal_probabilities():
    ds, truth = simulate({"seed": 3, "n_patients": 50, "sigma2": 0.0}, return_truth=True)
    assert set(truth["epsilon"].values()) == {0.0}


def test_bit_reproducible():
    a = simulate({"seed": 5, "n_patients": 40, "sigma2": 1.0})
    b = simulate({"seed": 5, "n_patients": 40, "sigma2": 1.0})
    assert a.patients == b.patients and a.falls == b.falls


@pytest.mark.parametrize("config", [
    {"n_patients": 5},
    {"seed": 1, "sigma2": -1.0},
    {"seed": 1, "stage1": {"coefficients": {"nope": 1.0}}},
    {"seed": 1, "falls_per_faller": {"distribution": "uniform"}},
    {"seed": 1, "bogus": 1},
])
def test_invalid_config(config):
    with pytest.raises(InvalidConfig):
        simulate(config)


def test_example_generator_is_deterministic(example_cohort):
    ds = make_example_cohort()
    assert ds.patients == example_cohort.patients
    assert ds.falls == example_cohort.falls
