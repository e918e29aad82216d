import numpy as np
import pytest

from fallrisk.datamodel import (
    BASELINE,
    BINARY,
    CATEGORICAL,
    CONTINUOUS,
    PER_FALL,
    CovariateSchema,
)
from fallrisk.simulate import load_example_cohort, simulate


def logistic_data(seed, n, p, coef=None, intercept=0.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    beta = np.zeros(p) if coef is None else np.asarray(coef, dtype=float)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-(intercept + X @ beta)))).astype(float)
    return X, y


def random_intercept_data(seed, n_patients, max_falls, sigma2, coef=(0.0,), intercept=0.0):
    rng = np.random.default_rng(seed)
    counts = rng.integers(1, max_falls + 1, size=n_patients)
    groups = np.repeat(np.arange(n_patients), counts)
    X = rng.normal(size=(groups.size, len(coef)))
    eps = rng.normal(0.0, np.sqrt(sigma2), size=n_patients)
    eta = intercept + X @ np.asarray(coef, dtype=float) + eps[groups]
    y = (rng.random(groups.size) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return X, y, groups


SMALL_SCHEMA = [
    CovariateSchema("age", CONTINUOUS),
    CovariateSchema("gait", CONTINUOUS),
    CovariateSchema("noise", CONTINUOUS),
    CovariateSchema("sex", CATEGORICAL, levels=("M", "F"), reference="M"),
    CovariateSchema("location", CATEGORICAL, stage=PER_FALL, levels=("INSIDE", "OUTSIDE"),
                    reference="INSIDE"),
    CovariateSchema("glasses", BINARY, stage=PER_FALL),
]


def small_cohort(seed=3, n=60, sigma2=1.0):
    config = {
        "seed": seed,
        "n_patients": n,
        "schema": [c.to_dict() for c in SMALL_SCHEMA],
        "stage1": {"intercept": 0.2, "coefficients": {"gait": -1.5}},
        "stage2": {"intercept": -0.5, "coefficients": {"location[OUTSIDE]": 1.0}},
        "sigma2": sigma2,
        "falls_per_faller": {"distribution": "zt_poisson", "mean": 2.0},
    }
    return simulate(config)


@pytest.fixture(scope="session")
def example_cohort():
    return load_example_cohort()


@pytest.fixture(scope="session")
def small_stage2_cohort():
    return small_cohort()


__all__ = ["BASELINE", "logistic_data", "random_intercept_data", "small_cohort"]


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
