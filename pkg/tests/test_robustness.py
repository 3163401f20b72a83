import warnings

import numpy as np
import pytest

from masc.errors import DonorPoolTooSmall
from masc.estimator import estimate
from masc.robustness import inactive_donors, leave_one_out

from conftest import convex_panel, random_panel


def test_inactive_donors_found():
    ds = convex_panel(n_donors=6)
    res = estimate(ds, "T1")
    assert inactive_donors(res) == ["D3", "D4", "D5", "D6"]


def test_dropping_inactive_donor_changes_nothing():
    ds = convex_panel(n_donors=6)
    loo = leave_one_out(ds, "T1")
    for d in ("D3", "D4", "D5", "D6"):
        for e in ("total", "direct", "indirect"):
            assert loo.deviation(d, e) <= 1e-8
    assert loo.deviation("D1", "total") > 1e-3
    assert loo.max_abs_deviation["total"] == pytest.approx(max(loo.deviation(d, "total") for d in ds.donors))
    assert loo.failed == {}


def test_pool_too_small():
    ds = random_panel(n_units=3)
    with pytest.raises(DonorPoolTooSmall):
        leave_one_out(ds, "T1")


def test_variants_cover_every_donor():
    ds = random_panel(n_units=4, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        # with only 3 donors every variant keeps 2, so nothing fails
        loo = leave_one_out(ds, "T1")
    assert set(loo.variants) == set(ds.donors)
    assert all(np.isfinite(v) for v in loo.max_abs_deviation.values())


def test_noise_donor_matters_less_than_active_donor():
    rng = np.random.default_rng(12)
    T, n_pre = 20, 15
    A, B = rng.normal(size=(2, T)).cumsum(axis=1)
    C = rng.normal(size=T) * 5
    D = rng.normal(size=T).cumsum() + 3
    y = 0.5 * A + 0.5 * B
    y[n_pre:] += 1.0
    mA, mB, mC, mD = rng.normal(size=(4, T))
    from masc.panel import PanelDataset

    ds = PanelDataset(
        units=("T1", "A", "B", "C", "D"),
        periods=tuple(range(T)),
        outcome=np.vstack([y, A, B, C, D]),
        mediator=np.vstack([0.5 * mA + 0.5 * mB, mA, mB, mC, mD]),
        intervention=n_pre,
        treated=("T1",),
        donors=("A", "B", "C", "D"),
    )
    loo = leave_one_out(ds, "T1")
    assert loo.deviation("C", "total") <= 1e-8
    assert loo.deviation("A", "total") > 10 * max(loo.deviation("C", "total"), 1e-8)
