import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masc.errors import OverlapWarning, PeriodMisalignment, SmallTreatedPoolWarning, TooFewTreated
from masc.estimator import (
    EstimationOptions,
    PeriodSeries,
    check_decomposition,
    estimate,
    estimate_counterfactual_mediator,
    estimate_delta1,
    estimate_direct,
    estimate_indirect,
    estimate_total,
)
from masc.panel import PanelDataset
from masc.predictors import PredictorSpec

from conftest import convex_panel, random_panel


def test_convex_combination_total(convex):
    y00, alpha = estimate_total(convex, "T1")
    np.testing.assert_allclose(y00.weights_by_period["all"].weights, [0.3, 0.7, 0, 0], atol=1e-8)
    np.testing.assert_allclose(alpha.values, 2.0, atol=1e-8)
    assert y00.pre_fit_rmspe < 1e-8


def test_convex_combination_direct_and_indirect(convex):
    res = estimate(convex, "T1")
    np.testing.assert_allclose(res.effects.total, 2.0, atol=1e-8)
    np.testing.assert_allclose(res.effects.direct, 2.0, atol=1e-8)
    np.testing.assert_allclose(res.effects.indirect, 0.0, atol=1e-8)
    assert set(res.y01.weights_by_period) == set(convex.post_periods)


def test_treated_identical_to_donor():
    ds = convex_panel(weights=(1.0,), shift=0.0, seed=5)
    res = estimate(ds, "T1")
    for e in ("total", "direct", "indirect"):
        np.testing.assert_allclose(res.effects.get(e), 0.0, atol=1e-8)


def test_decomposition_identity_holds_exactly():
    ds = random_panel(seed=11)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverlapWarning)
        res = estimate(ds, "T1")
    assert check_decomposition(res.effects.rows()) == []
    np.testing.assert_array_equal(res.gaps("indirect")[res.n_pre :], res.effects.indirect)


def test_direct_pre_period_uses_mean_weights(convex):
    y01, theta = estimate_direct(convex, "T1")
    mean_w = np.mean([w.weights for w in y01.weights_by_period.values()], axis=0)
    n_pre = convex.n_pre
    np.testing.assert_allclose(y01.values[:n_pre], mean_w @ convex.outcome[1:, :n_pre])
    assert theta.periods == convex.post_periods


def test_lag_drops_early_post_periods(convex):
    res = estimate(convex, "T1", mediator_mode="single-lag(1)")
    assert res.effects.post_periods == convex.post_periods[1:]
    full = estimate(convex, "T1", mediator_mode="full-path")
    assert full.effects.post_periods == convex.post_periods


def test_custom_specs_and_user_v(convex):
    specs = (PredictorSpec("outcome", (2000, 2005)), PredictorSpec("outcome", (2006, 2011)))
    opts = EstimationOptions(specs=specs, v_total="user", v_user={s.label: 1.0 for s in specs})
    _, alpha = estimate_total(convex, "T1", options=opts)
    assert alpha.values.shape == (4,)


def test_indirect_requires_aligned_periods():
    a = PeriodSeries((1, 2), np.array([1.0, 2.0]))
    b = PeriodSeries((2, 3), np.array([1.0, 2.0]))
    with pytest.raises(PeriodMisalignment):
        estimate_indirect(a, b)
    np.testing.assert_array_equal(estimate_indirect(a, a).values, [0.0, 0.0])


def test_overlap_warning():
    ds = random_panel(seed=2)
    shifted = np.array(ds.outcome)
    shifted[0] += 50.0
    with pytest.warns(OverlapWarning):
        estimate_total(ds.replace_values(outcome=shifted), "T1")


def test_treated_in_own_pool_rejected(convex):
    with pytest.raises(ValueError):
        estimate(convex, "T1", ["T1", "D1"])


def test_counterfactual_mediator_on_combination(convex):
    m0 = estimate_counterfactual_mediator(convex, "T1")
    np.testing.assert_allclose(m0.values, convex.mediator[0], atol=1e-8)


def _two_treated(weights=(0.3, 0.7)):
    ds = convex_panel(weights, seed=3)
    # second treated unit is a copy of the first
    units = ("T1", "T2") + ds.units[1:]
    return PanelDataset(
        units=units,
        periods=ds.periods,
        outcome=np.vstack([ds.outcome[:1], ds.outcome[:1], ds.outcome[1:]]),
        mediator=np.vstack([ds.mediator[:1], ds.mediator[:1], ds.mediator[1:]]),
        intervention=ds.intervention,
        treated=("T1", "T2"),
        donors=ds.units[1:],
    )


def test_delta1_identical_treated_pair():
    ds = _two_treated()
    with pytest.warns(SmallTreatedPoolWarning):
        d1 = estimate_delta1(ds, "T1", ["T2"])
    np.testing.assert_allclose(d1.delta1.values, 0.0, atol=1e-10)
    np.testing.assert_allclose(d1.total.values, 2.0, atol=1e-8)
    np.testing.assert_array_equal(d1.total.values - d1.delta1.values, d1.theta0.values)


def test_delta1_needs_other_treated():
    ds = _two_treated()
    with pytest.raises(TooFewTreated):
        estimate_delta1(ds, "T1", ["T1"])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 9), st.integers(3, 10), st.integers(1, 4))
def test_identity_on_random_panels(seed, n_units, n_pre, n_post):
    ds = random_panel(n_units=n_units, n_pre=n_pre, n_post=n_post, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = estimate(ds, "T1")
    fx = res.effects
    assert np.all(np.abs(fx.total - (fx.direct + fx.indirect)) <= 1e-12)
    for w in list(res.y00.weights_by_period.values()) + list(res.y01.weights_by_period.values()):
        assert w.weights.min() >= 0 and abs(w.weights.sum() - 1) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(-100, 100), st.floats(0.1, 10))
def test_effects_shift_and_scale_with_data(seed, b, a):
    ds = random_panel(n_units=6, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base = estimate(ds, "T1")
        moved = estimate(ds.replace_values(outcome=a * ds.outcome + b), "T1")
    np.testing.assert_allclose(moved.effects.total, a * base.effects.total, atol=1e-6 * (1 + a + abs(b)))
