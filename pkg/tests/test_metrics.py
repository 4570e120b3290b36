import pytest
from hypothesis import given
from hypothesis import strategies as st

from gazekey.metrics import rates


def test_demo_counts():
    r = rates(35, 1, 0)
    assert round(r.precision, 3) == 0.972 and r.recall == 1.0


def test_aggregate_counts():
    r = rates(12428, 2039, 411)
    assert round(r.precision, 3) == 0.859 and round(r.recall, 3) == 0.968


def test_zero_denominators_are_flagged():
    r = rates(0, 0, 10, 5)
    assert r.precision == 0.0 and "precision" in r.undefined
    assert r.recall == 0.0 and r.accuracy == pytest.approx(5 / 15)


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        rates(-1, 0, 0)


@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_rates_in_unit_interval(tp, fp, fn, tn):
    r = rates(tp, fp, fn, tn)
    for v in (r.precision, r.recall, r.accuracy):
        assert 0.0 <= v <= 1.0
