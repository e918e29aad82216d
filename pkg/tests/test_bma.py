import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import logistic_data
from fallrisk.bma import (
    LITERAL_LML_RATIO,
    NORMALIZED_MARGINAL,
    bma_predict,
    build_ensemble,
    ensemble_weights,
)
from fallrisk.exceptions import EmptyEnsemble, InvalidConfig
from fallrisk.laplace import design_from_arrays, fit_stage1
from fallrisk.oracle import mp_softmax
from fallrisk.predict import predict_stage1
from fallrisk.selection import forward_select

finite = st.floats(min_value=-1e4, max_value=1e4, allow_nan=False)


def test_softmax_weights_extended_precision():
    w = ensemble_weights([-10.0, -11.0, -12.0])
    np.testing.assert_allclose(w, mp_softmax([-10, -11, -12]), rtol=1e-14)
    np.testing.assert_allclose(w, [0.6652, 0.2447, 0.0900], atol=1e-4)


@given(st.lists(finite, min_size=1, max_size=30), finite)
def test_weights_normalized_and_shift_invariant(lmls, shift):
    w = ensemble_weights(lmls)
    assert abs(w.sum() - 1.0) <= 1e-12 and np.all(w >= 0)
    np.testing.assert_allclose(ensemble_weights(np.array(lmls) + shift), w, atol=1e-12)


def test_literal_rule():
    np.testing.assert_allclose(ensemble_weights([-1.0, -3.0], LITERAL_LML_RATIO), [0.25, 0.75])
    with pytest.raises(InvalidConfig):
        ensemble_weights([-1.0, 0.5], LITERAL_LML_RATIO)


def test_empty_and_unknown_rule():
    with pytest.raises(EmptyEnsemble):
        ensemble_weights([])
    with pytest.raises(InvalidConfig):
        ensemble_weights([-1.0], "bogus")


class _Fit:
    def __init__(self, lml, p, model):
        self.lml, self.p, self.model, self.stage = lml, p, model, 1


def _predict(fit, design):
    return np.full(design.n_rows, fit.p)


def _design(n=3):
    return design_from_arrays(np.zeros((n, 0)), np.zeros(n))


def test_single_member_weight_one():
    ens = build_ensemble([_Fit(-5.0, 0.3, [])])
    assert ens.weights.tolist() == [1.0]


def test_convexity_fixed_points():
    ens = build_ensemble([_Fit(-5.0, 0.5, []), _Fit(-7.0, 0.5, [])])
    assert np.all(bma_predict(ens, _design(), _predict) == 0.5)
    ens = build_ensemble([_Fit(-5.0, 0.2, []), _Fit(-5.0, 0.8, [])])
    np.testing.assert_allclose(bma_predict(ens, _design(), _predict), 0.5, atol=1e-15)


def test_zero_weight_member_is_inert():
    ens = build_ensemble([_Fit(-5.0, 0.2, []), _Fit(-7.0, 0.9, [])])
    base = bma_predict(ens, _design(), _predict)
    ens2 = build_ensemble([_Fit(-5.0, 0.2, []), _Fit(-7.0, 0.9, []), _Fit(-1e5, 0.0, [])])
    assert ens2.members[-1].weight == 0.0
    np.testing.assert_allclose(bma_predict(ens2, _design(), _predict), base, atol=1e-15)


def test_ensemble_from_trace_and_table():
    Z, y = logistic_data(0, 200, 4, coef=[1.0, 0.0, -1.0, 0.0])
    d = design_from_arrays(Z, y)
    trace = forward_select(d)
    ens = build_ensemble(trace)
    assert len(ens.members) == len(trace.all_evaluated)
    assert ens.weight_rule == NORMALIZED_MARGINAL
    p = bma_predict(ens, d, predict_stage1)
    members = np.vstack([predict_stage1(m.fit, d.subset(m.variables)).probabilities
                         for m in ens.members])
    assert np.all(p >= members.min(axis=0)) and np.all(p <= members.max(axis=0))
    table = ens.render_table(5).splitlines()
    assert table[-1].startswith("Weight") and len(table[0].split()) == 6
    top = ens.top_table(5)
    assert [r["rank"] for r in top] == [1, 2, 3, 4, 5]
    assert top[0]["weight"] >= top[1]["weight"]


def test_single_member_reproduces_member_bitwise():
    Z, y = logistic_data(1, 100, 2, coef=[1.0, 0.5])
    d = design_from_arrays(Z, y)
    fit = fit_stage1(d)
    ens = build_ensemble([fit])
    assert np.array_equal(bma_predict(ens, d, predict_stage1), predict_stage1(fit, d).probabilities)
