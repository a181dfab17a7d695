import logging

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stsir.data import (
    CaseSeriesPanel,
    PredictorTable,
    accounting_susceptibles,
    asymptomatic_lambda,
    changepoint_index,
    ingest_cases,
    read_mobility_csv,
    read_population_csv,
    read_predictors_csv,
    susceptible_trajectory,
    three_day_average,
)
from stsir.errors import (
    DataError,
    EmptyDateRange,
    LengthMismatch,
    NegativeLambda,
    NonMonotoneDates,
    RateOutOfRange,
    TooShortSeries,
    UnknownAreaId,
)


def _raw(cum, fips="45001", start="2020-03-06", skip=()):
    dates = pd.date_range(start, periods=len(cum))
    rows = [{"date": d.strftime("%Y-%m-%d"), "fips": fips, "cases": c, "deaths": 0}
            for k, (d, c) in enumerate(zip(dates, cum)) if k not in skip]
    return pd.DataFrame(rows)


def _panel(cases, deaths=None, population=None):
    cases = np.atleast_2d(np.asarray(cases, dtype=np.int64))
    deaths = np.zeros_like(cases) if deaths is None else np.atleast_2d(np.asarray(deaths, dtype=np.int64))
    n, J = cases.shape
    dates = np.datetime64("2020-03-06") + np.arange(J)
    return CaseSeriesPanel(tuple(f"A{i}" for i in range(n)), dates, cases, deaths, population)


# ---- ingestion


def test_first_difference():
    p = ingest_cases(_raw([0, 3, 3, 10]), ["45001"])
    assert p.cases[0].tolist() == [0, 3, 0, 7]
    assert p.n_clamped == 0


def test_negative_increment_clamped(caplog):
    with caplog.at_level(logging.WARNING):
        p = ingest_cases(_raw([5, 4]), ["45001"])
    assert p.cases[0].tolist() == [5, 0]
    assert p.n_clamped == 1
    assert "clamped 1" in caplog.text


def test_missing_middle_date_forward_filled():
    p = ingest_cases(_raw([2, 99, 6], skip={1}), ["45001"])
    assert p.cases[0].tolist() == [2, 0, 4]


def test_date_range_subtracts_earlier_cumulative():
    p = ingest_cases(_raw([1, 4, 9, 16]), ["45001"], ("2020-03-07", "2020-03-08"))
    assert p.cases[0].tolist() == [3, 5]
    assert str(p.dates[0]) == "2020-03-07"


def test_rows_for_other_areas_ignored_and_order_kept():
    raw = pd.concat([_raw([1, 2], "45003"), _raw([5, 9], "45001"), _raw([7, 8], "99999")])
    p = ingest_cases(raw, ["45001", "45003"])
    assert p.area_ids == ("45001", "45003")
    assert p.cases.tolist() == [[5, 4], [1, 1]]


def test_numeric_fips_zero_padded():
    raw = _raw([1, 3], fips="1001")
    p = ingest_cases(raw, ["01001"])
    assert p.cases[0].tolist() == [1, 2]


def test_ingest_errors():
    with pytest.raises(UnknownAreaId):
        ingest_cases(_raw([1, 2]), ["45001", "45999"])
    dup = pd.concat([_raw([1, 2]), _raw([1, 2])])
    with pytest.raises(NonMonotoneDates):
        ingest_cases(dup, ["45001"])
    with pytest.raises(EmptyDateRange):
        ingest_cases(_raw([1, 2]), ["45001"], ("2020-03-09", "2020-03-07"))
    with pytest.raises(EmptyDateRange):
        ingest_cases(_raw([1, 2]), ["45001"], ("2021-01-01", "2021-02-01"))


@given(st.lists(st.integers(0, 500), min_size=1, max_size=40))
def test_reaccumulating_increments_reproduces_cumulative(incs):
    cum = np.cumsum(incs)
    p = ingest_cases(_raw(cum.tolist()), ["45001"])
    assert np.array_equal(np.cumsum(p.cases[0]), cum)
    assert p.n_clamped == 0


def test_panel_rejects_negative_and_gaps():
    with pytest.raises(DataError):
        _panel([[1, -1]])
    dates = np.array(["2020-03-06", "2020-03-08"], dtype="datetime64[D]")
    with pytest.raises(NonMonotoneDates):
        CaseSeriesPanel(("A",), dates, np.zeros((1, 2), np.int64), np.zeros((1, 2), np.int64))


# ---- 3-day average


def test_three_day_average_examples():
    assert three_day_average(_panel([1, 2, 3, 4])).values[0].tolist() == [1, 1.5, 2, 3]
    assert three_day_average(_panel([0, 0, 6])).values[0].tolist() == [0, 0, 2]
    assert three_day_average(_panel([7] * 10)).values[0].tolist() == [7.0] * 10


def test_three_day_average_too_short():
    with pytest.raises(TooShortSeries):
        three_day_average(_panel([1, 2]))


@given(st.lists(st.integers(0, 10_000), min_size=3, max_size=60))
def test_three_day_average_total_close(ys):
    v = three_day_average(_panel(ys)).values[0]
    assert (v >= 0).all()
    assert abs(v.sum() - sum(ys)) <= 4 * max(ys) + 1e-9
    # brute force trailing window
    expect = [np.mean(ys[max(0, j - 2): j + 1]) for j in range(len(ys))]
    assert np.allclose(v, expect)


# ---- susceptibles


def test_accounting_equation_example():
    p = _panel([[100, 0]], [[5, 0]], population=[100000])
    S = susceptible_trajectory(p, 0.25).S
    assert S[0, 1] == 99870


def test_accounting_zero_counts_and_floor():
    S = susceptible_trajectory(_panel([[0, 0, 0]], population=[500]), 0.25).S
    assert S[0].tolist() == [500, 500, 500]
    S = susceptible_trajectory(_panel([[100, 0]], population=[50]), 0.0).S
    assert S[0, 1] == 0


def test_negative_lambda_and_missing_population():
    with pytest.raises(NegativeLambda):
        susceptible_trajectory(_panel([[1, 1]], population=[10]), -0.1)
    with pytest.raises(DataError):
        susceptible_trajectory(_panel([[1, 1]]), 0.1)


@given(st.lists(st.integers(0, 300), min_size=2, max_size=30), st.integers(1, 5000),
       st.floats(0, 3), st.integers(0, 20))
def test_susceptibles_monotone_nonnegative(ys, pop, lam, dmax):
    y = np.array([ys])
    d = np.minimum(y, dmax)
    S = accounting_susceptibles([pop], y, d, lam)
    assert (S >= 0).all()
    assert (np.diff(S, axis=1) <= 0).all()


@given(st.lists(st.integers(0, 300), min_size=2, max_size=30), st.integers(1, 5000))
def test_susceptibles_closed_form_without_removals(ys, pop):
    S = accounting_susceptibles([pop], np.array([ys]), np.zeros((1, len(ys))), 0.0)
    assert S[0, -1] == max(0, pop - sum(ys[:-1]))


# ---- asymptomatic mapping


def test_lambda_anchors():
    assert asymptomatic_lambda(20) == pytest.approx(0.25)
    assert asymptomatic_lambda(50) == pytest.approx(1.0)
    assert asymptomatic_lambda(0) == 0
    assert asymptomatic_lambda(75) == pytest.approx(3.0)


@pytest.mark.parametrize("bad", [-1, 100, 150])
def test_lambda_out_of_range(bad):
    with pytest.raises(RateOutOfRange):
        asymptomatic_lambda(bad)


# ---- change points


def test_changepoints_sc():
    idx = changepoint_index([18, 20, 13, 250], 301)
    day = lambda j: idx[j - 1]
    assert [day(1), day(18), day(19), day(38), day(39), day(51), day(52), day(301)] == [1, 1, 2, 2, 3, 3, 4, 4]


def test_changepoints_nj():
    idx = changepoint_index([16, 80, 205], 301)
    day = lambda j: idx[j - 1]
    assert [day(16), day(17), day(96), day(97), day(301)] == [1, 2, 2, 3, 3]


def test_changepoints_single_and_errors():
    assert (changepoint_index([9], 9) == 1).all()
    with pytest.raises(LengthMismatch):
        changepoint_index([5, 5], 11)
    with pytest.raises(LengthMismatch):
        changepoint_index([5, 0, 6], 11)


@given(st.lists(st.integers(1, 40), min_size=1, max_size=8))
def test_changepoints_nondecreasing_surjective(lengths):
    idx = changepoint_index(lengths, sum(lengths))
    assert (np.diff(idx) >= 0).all() and (np.diff(idx) <= 1).all()
    assert idx[0] == 1 and set(idx.tolist()) == set(range(1, len(lengths) + 1))


# ---- auxiliary files


def test_predictor_table_standardised(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("fips,pct_poverty,pct_black,mdi17\nB,10,20,0.1\nA,20,40,0.3\nC,30,30,0.2\n")
    t = read_predictors_csv(p, ["A", "B", "C"])
    assert t.raw[:, 0].tolist() == [20, 10, 30]
    assert np.allclose(t.values.mean(axis=0), 0) and np.allclose(t.values.std(axis=0), 1)
    with pytest.raises(UnknownAreaId):
        read_predictors_csv(p, ["A", "Z"])


def test_constant_predictor_rejected():
    with pytest.raises(DataError):
        PredictorTable(("A", "B"), ("x",), np.array([[1.0], [1.0]]))


def test_population_csv(tmp_path):
    p = tmp_path / "pop.csv"
    p.write_text("fips,population\n45001,24527\n45003,170872\n")
    assert read_population_csv(p, ["45003", "45001"]).tolist() == [170872, 24527]
    p.write_text("fips,population\n45001,0\n")
    with pytest.raises(DataError):
        read_population_csv(p, ["45001"])


def test_mobility_forward_fill(tmp_path):
    p = tmp_path / "mob.csv"
    p.write_text("date,fips,work_index\n2020-03-07,A,-10\n2020-03-09,A,-30\n2020-03-06,B,5\n")
    dates = np.datetime64("2020-03-06") + np.arange(4)
    m = read_mobility_csv(p, ["A", "B"], dates, [2, 2])
    assert m.work.tolist() == [[0, -10, -10, -30], [5, 5, 5, 5]]
    assert m.period_index.tolist() == [1, 1, 2, 2]
