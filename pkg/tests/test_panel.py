import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masc.config import EstimationConfig
from masc.errors import (
    DesignError,
    DuplicateCell,
    MissingCell,
    NonNumeric,
    UnknownColumn,
    UnknownPeriod,
    UnknownUnit,
)
from masc.panel import PanelDataset, load_panel, serialize_panel, validate, write_panel
from masc.predictors import PredictorSpec

from conftest import random_panel

CSV = b"""unit,period,outcome,mediator,gdp
A,1,1.0,0.5,3
A,2,2.0,0.6,3
B,1,1.5,0.4,2
B,2,2.5,0.7,2
C,1,0.5,0.1,1
C,2,1.0,0.2,1
"""


def test_load_canonical_columns():
    ds = load_panel(CSV)
    assert ds.units == ("A", "B", "C")
    assert ds.periods == (1, 2)
    assert ds.outcome[1, 1] == 2.5
    assert list(ds.covariates) == ["gdp"]
    assert ds.variable("gdp")[2, 0] == 1.0


def test_load_with_schema_and_design():
    text = CSV.replace(b"outcome", b"y").replace(b"mediator", b"m")
    ds = load_panel(text, {"outcome": "y", "mediator": "m", "covariates": []}, intervention=2, treated=["A"])
    assert ds.covariates == {}
    assert ds.n_pre == 1
    assert ds.donors == ("B", "C")
    assert ds.post_periods == (2,)


def test_rows_in_any_order():
    lines = CSV.decode().splitlines()
    shuffled = "\n".join([lines[0]] + lines[:0:-1]).encode()
    a, b = load_panel(CSV), load_panel(shuffled)
    order = [b.units.index(u) for u in a.units]
    np.testing.assert_array_equal(a.outcome, b.outcome[order])


@pytest.mark.parametrize(
    "text, err",
    [
        (CSV.replace(b"B,2,2.5", b"B,2,"), MissingCell),
        (CSV.replace(b"B,2,2.5", b"B,2,abc"), NonNumeric),
        (CSV.replace(b"B,2,2.5", b"B,2,nan"), NonNumeric),
        (CSV + b"C,2,1.0,0.2,1\n", DuplicateCell),
        (b"\n".join(CSV.splitlines()[:-1]) + b"\n", MissingCell),
        (CSV.replace(b"mediator", b"med"), UnknownColumn),
        (b"", UnknownColumn),
        (CSV.replace(b"A,2,", b"A,2.5,"), NonNumeric),
    ],
)
def test_load_errors(text, err):
    with pytest.raises(err):
        load_panel(text)


def test_error_codes_are_class_names():
    with pytest.raises(MissingCell) as info:
        load_panel(CSV.replace(b"B,2,2.5", b"B,2,"))
    assert info.value.code == "MissingCell"


def test_design_errors():
    ds = load_panel(CSV)
    with pytest.raises(DesignError):
        ds.with_design(1, ["A"])
    with pytest.raises(DesignError):
        ds.with_design(2, ["A"], ["A", "B"])
    with pytest.raises(DesignError):
        ds.with_design(2, ["A"], ["B"])
    with pytest.raises(UnknownUnit):
        ds.with_design(2, ["Z"])
    with pytest.raises(UnknownPeriod):
        ds.with_design(7, ["A"])
    with pytest.raises(DesignError):
        ds.n_pre


def test_arrays_are_read_only():
    ds = load_panel(CSV)
    with pytest.raises(ValueError):
        ds.outcome[0, 0] = 9.0


def test_write_round_trip(tmp_path):
    ds = random_panel(seed=3)
    path = tmp_path / "p.csv"
    write_panel(ds, path)
    back = load_panel(path)
    np.testing.assert_array_equal(back.outcome, ds.outcome)
    np.testing.assert_array_equal(back.mediator, ds.mediator)
    np.testing.assert_array_equal(back.covariates["x1"], ds.covariates["x1"])
    assert serialize_panel(back) == path.read_text()


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 4),
    st.integers(1, 4),
    st.data(),
)
def test_serialize_round_trip_is_exact(n, t, data):
    vals = data.draw(st.lists(finite, min_size=2 * n * t, max_size=2 * n * t))
    arr = np.array(vals).reshape(2, n, t)
    ds = PanelDataset(tuple(f"u{i}" for i in range(n)), tuple(range(t)), arr[0], arr[1])
    back = load_panel(serialize_panel(ds).encode())
    np.testing.assert_array_equal(back.outcome, ds.outcome)
    np.testing.assert_array_equal(back.mediator, ds.mediator)


def _codes(report):
    return {i.code for i in report.errors}, {i.code for i in report.warnings}


def test_validate_clean_and_small_pool():
    ds = load_panel(CSV)
    errors, warns = _codes(validate(ds, EstimationConfig(treated=("A",), intervention=2)))
    assert errors == set()
    assert "SmallDonorPool" in warns


def test_validate_collects_all_errors():
    ds = load_panel(CSV)
    cfg = EstimationConfig(
        treated=("A", "Q"),
        donors=("A",),
        intervention=2,
        predictors=(PredictorSpec("outcome", (1, 2)), PredictorSpec("covariate", (1, 1), "pop")),
    )
    errors, _ = _codes(validate(ds, cfg))
    assert errors >= {"UnknownUnit", "TreatedInDonorPool", "DonorPoolTooSmall", "WindowCrossesIntervention", "UnknownColumn"}


def test_validate_lag_and_constant_predictor():
    ds = load_panel(CSV)
    cfg = EstimationConfig(
        treated=("A",), intervention=2, mediator_mode="single-lag(1)", predictors=(PredictorSpec("outcome", (1, 1)),)
    )
    errors, _ = _codes(validate(ds, cfg))
    assert "LagBeforeIntervention" in errors
    flat = ds.replace_values(outcome=np.ones_like(ds.outcome))
    cfg = EstimationConfig(treated=("A",), intervention=2, predictors=(PredictorSpec("outcome", (1, 1)),))
    _, warns = _codes(validate(flat, cfg))
    assert "ConstantPredictor" in warns


def test_validate_unknown_intervention():
    errors, _ = _codes(validate(load_panel(CSV), EstimationConfig(treated=("A",), intervention=9)))
    assert "UnknownPeriod" in errors
