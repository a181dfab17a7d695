import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stsir.data import CaseSeriesPanel, MobilityPanel, PredictorTable, changepoint_index, three_day_average
from stsir.errors import DepletedSusceptibles, IncompatibleData, UnknownPreset
from stsir.graph import build_graph
from stsir.models import (
    CATALOG,
    ParameterState,
    build_model_data,
    catalog,
    catalog_table,
    flatten_state,
    linear_predictor,
    log_mean,
    parameter_names,
    term_contributions,
    unflatten_state,
    zero_state,
)

IDS = ("A", "B", "C", "D")
J = 9


def _fixture(seed=0, J=J, pop=(1e5, 5e4, 2e5, 8e4)):
    """4-area cycle with random counts, deaths, predictors and a two-period work index."""
    rng = np.random.default_rng(seed)
    g = build_graph([("A", "B"), ("B", "C"), ("C", "D"), ("D", "A")], IDS)
    cases = rng.poisson(30, (4, J))
    deaths = rng.binomial(cases, 0.02)
    dates = np.datetime64("2020-04-01") + np.arange(J)
    panel = CaseSeriesPanel(IDS, dates, cases, deaths, np.array(pop, float))
    preds = PredictorTable(IDS, ("pct_poverty", "pct_black", "mdi17"), rng.normal(size=(4, 3)) * 5 + 20)
    lengths = (4, J - 4)
    mob = MobilityPanel(IDS, dates, rng.normal(-20, 8, (4, J)), lengths, changepoint_index(lengths, J))
    return g, panel, preds, mob


def _random_state(preset, data, seed=1):
    rng = np.random.default_rng(seed)
    st_ = zero_state(preset.spec, data, preset.data_model)
    st_.alpha = rng.normal([-9.0, 0.3, 0.1], 0.05)
    if st_.theta is not None:
        st_.theta = rng.normal(0, 0.2, st_.theta.shape)
    if st_.gamma is not None:
        st_.gamma = rng.integers(0, 2, st_.gamma.shape)
    if st_.v is not None:
        st_.v = rng.normal(0, 0.1, st_.v.shape)
    if st_.u is not None:
        st_.u = rng.normal(0, 0.1, st_.u.shape)
    if st_.eta is not None:
        st_.eta = rng.normal(0, 0.01, st_.eta.shape)
    return st_


def brute_log_mean(preset, state, panel, graph, lam, preds, mob, i, j):
    """Independent evaluator working from the raw panel with plain loops."""
    spec = preset.spec
    S = panel.population[i]
    for k in range(j):
        S = max(0.0, S - (1 + lam) * panel.cases[i, k] - panel.deaths[i, k])
    y = panel.cases.astype(float)
    if preset.data_model.kind == "lognormal_3d":
        y = np.array([[np.mean(panel.cases[a, max(0, t - 2): t + 1]) for t in range(panel.n_days)]
                      for a in range(panel.n_areas)])
    val = math.log(S) + state.alpha[0]
    if spec.include_self_lag:
        val += state.alpha[1] * math.log(y[i, j - 1] + 1)
    if spec.include_neighbor_lag:
        val += state.alpha[2] * math.log(sum(y[k, j - 1] for k in graph.neighbor_lists[i]) + 1)
    if spec.uses_predictors:
        x = preds.values[i]
        beta = state.theta if state.gamma is None else state.theta * state.gamma
        val += sum(x[k] * beta[k] for k in range(len(x)))
    if spec.uh_mode == "spatial":
        val += state.v[i]
    elif spec.uh_mode != "none":
        val += state.v[i, j - 1]
    if spec.icar:
        val += state.u[i]
    if spec.mobility:
        val += state.eta[mob.period_index[j] - 1] * mob.work[i, j]
    return val


# ---- catalog


def test_catalog_5a():
    s = catalog("5A").spec
    assert (s.include_self_lag, s.include_neighbor_lag, s.uh_mode, s.icar, s.predictor_mode) == \
        (True, True, "spatial", False, "fixed")


def test_catalog_1_and_6b():
    s = catalog("1").spec
    assert (s.include_self_lag, s.include_neighbor_lag, s.uh_mode, s.icar, s.predictor_mode) == \
        (True, False, "spatial", True, "none")
    s6, s5 = catalog("6B").spec, catalog("5B").spec
    assert s6.uh_mode == "spacetime_tvprec"
    assert (s6.include_neighbor_lag, s6.icar, s6.predictor_mode) == (s5.include_neighbor_lag, s5.icar, s5.predictor_mode)


def test_catalog_relations():
    assert catalog("5B").spec == catalog("5A").spec.__class__(**{**catalog("5A").spec.__dict__, "icar": True})
    m1, m2, m3 = (catalog(f"mobility-{k}").spec for k in (1, 2, 3))
    assert m1.mobility and not m2.mobility and m3.mobility
    assert m2.__dict__ == {**m1.__dict__, "mobility": False}
    assert m3.__dict__ == {**m1.__dict__, "include_neighbor_lag": False}
    assert catalog("3D-4").data_model.tv_obs_precision
    assert all(catalog(f"3D-{k}").data_model.kind == "lognormal_3d" for k in range(1, 7))


@pytest.mark.parametrize("name,expect", [("SC-5A", "5A"), ("nj-5b", "5B"), ("3d-6", "3D-6"), ("Mobility-2", "mobility-2")])
def test_catalog_aliases(name, expect):
    assert catalog(name).name == expect


def test_catalog_unknown():
    with pytest.raises(UnknownPreset, match="7Z"):
        catalog("7Z")


def test_catalog_complete_and_table():
    daily = ["1", "2A", "2B", "3A", "3B", "4A", "4B", "4C", "5A", "5B", "6A", "6B"]
    names = daily + [f"3D-{k}" for k in range(1, 7)] + [f"mobility-{k}" for k in (1, 2, 3)]
    assert list(CATALOG) == names
    table = catalog_table()
    assert all(n in table for n in names)


# ---- log mean


def test_log_mean_identity_case():
    g, panel, preds, mob = _fixture()
    panel = CaseSeriesPanel(IDS, panel.dates, np.zeros_like(panel.cases), np.zeros_like(panel.deaths),
                            np.full(4, 1e5))
    pre = catalog("2A")
    data = build_model_data(panel, g, pre, 0.25)
    st_ = zero_state(pre.spec, data)
    assert log_mean(pre.spec, st_, data, 0, 3) == pytest.approx(11.512925464970229, abs=1e-12)


def test_log_mean_worked_example():
    g = build_graph([("A", "B")], ["A", "B"])
    cases = np.array([[99, 0], [0, 0]])
    panel = CaseSeriesPanel(("A", "B"), np.datetime64("2020-04-01") + np.arange(2), cases,
                            np.zeros_like(cases), np.array([1e5 + 1.25 * 99, 1e5]))
    pre = catalog("2A")
    data = build_model_data(panel, g, pre, 0.25)
    st_ = ParameterState(alpha=np.array([-10.0, 0.2, 0.0]), v=np.zeros(2), tau_v=1.0)
    # oracle: log(1e5) - 10 + 0.2 log(100) evaluated at 30 digits
    assert log_mean(pre.spec, st_, data, 0, 1) == pytest.approx(2.4339595021678467, abs=1e-12)


@pytest.mark.parametrize("name", list(CATALOG))
def test_log_mean_matches_brute_force(name):
    pre = catalog(name)
    g, panel, preds, mob = _fixture(seed=3)
    data = build_model_data(panel, g, pre, 0.25, preds, mob)
    st_ = _random_state(pre, data)
    grid = linear_predictor(pre.spec, st_, data)
    for i in range(4):
        for j in range(1, data.n_days):
            expect = brute_log_mean(pre, st_, panel, g, 0.25, preds, mob, i, j)
            assert log_mean(pre.spec, st_, data, i, j) == pytest.approx(expect, abs=1e-10)
            assert grid[i, j - 1] == pytest.approx(expect, abs=1e-10)


def test_mobility_window_restricts_panel():
    g, panel, preds, mob = _fixture(J=12)
    sub = MobilityPanel(IDS, mob.dates[2:10], mob.work[:, 2:10], (3, 5), changepoint_index((3, 5), 8))
    pre = catalog("mobility-1")
    data = build_model_data(panel, g, pre, 0.25, preds, sub)
    assert data.n_days == 8 and data.dates[0] == panel.dates[2]
    assert data.period.tolist() == [0, 0, 1, 1, 1, 1, 1]
    # susceptibles still follow the full history
    assert data.S[0, 0] < panel.population[0]


def test_term_additivity_zeroed_terms():
    g, panel, preds, mob = _fixture()
    full, base = catalog("mobility-1"), catalog("2A")
    d_full = build_model_data(panel, g, full, 0.25, preds, mob)
    d_base = build_model_data(panel.select_dates(mob.dates[0], mob.dates[-1]), g, base, 0.25)
    st_full = _random_state(full, d_full)
    st_full.alpha[2] = 0.0
    st_full.theta[:] = 0.0
    st_full.eta[:] = 0.0
    st_base = ParameterState(alpha=st_full.alpha.copy(), v=st_full.v, tau_v=1.0)
    assert np.array_equal(linear_predictor(full.spec, st_full, d_full), linear_predictor(base.spec, st_base, d_base))


@pytest.mark.parametrize("big,small,term", [("5A", "4C", "predictors"), ("mobility-1", "mobility-2", "mobility")])
def test_preset_pair_difference_is_one_term(big, small, term):
    g, panel, preds, mob = _fixture(seed=5)
    pb, ps = catalog(big), catalog(small)
    db = build_model_data(panel, g, pb, 0.25, preds, mob)
    ds = build_model_data(panel, g, ps, 0.25, preds, mob)
    stb = _random_state(pb, db)
    sts = ParameterState(alpha=stb.alpha, theta=stb.theta, v=stb.v, tau_v=1.0)
    diff = linear_predictor(pb.spec, stb, db) - linear_predictor(ps.spec, sts, ds)
    contrib = np.broadcast_to(term_contributions(pb.spec, stb, db)[term], diff.shape)
    assert np.allclose(diff, contrib, atol=1e-12)


@settings(max_examples=30)
@given(st.floats(0.01, 2.0), st.integers(0, 1000), st.integers(1, 1000))
def test_log_mean_increasing_in_lag(a1, y, dy):
    g = build_graph([("A", "B")], ["A", "B"])
    pre = catalog("2A")
    st_ = ParameterState(alpha=np.array([-9.0, a1, 0.0]), v=np.zeros(2), tau_v=1.0)
    vals = []
    for prev in (y, y + dy):
        cases = np.array([[prev, 0], [0, 0]])
        # population adjusted so S on day 1 is held fixed
        panel = CaseSeriesPanel(("A", "B"), np.datetime64("2020-04-01") + np.arange(2), cases,
                                np.zeros_like(cases), np.array([1e6 + 1.25 * prev, 1e6]))
        vals.append(log_mean(pre.spec, st_, build_model_data(panel, g, pre, 0.25), 0, 1))
    assert vals[1] > vals[0]


def test_log_mean_relabel_invariant():
    g, panel, preds, mob = _fixture(seed=9)
    pre = catalog("5B")
    data = build_model_data(panel, g, pre, 0.25, preds)
    st_ = _random_state(pre, data)
    perm = [2, 0, 3, 1]
    ids2 = tuple(IDS[p] for p in perm)
    g2 = build_graph([(g.area_ids[i], g.area_ids[k]) for i, k in g.edges], ids2)
    panel2 = CaseSeriesPanel(ids2, panel.dates, panel.cases[perm], panel.deaths[perm], panel.population[perm])
    preds2 = PredictorTable(ids2, preds.names, preds.raw[perm])
    data2 = build_model_data(panel2, g2, pre, 0.25, preds2)
    st2 = ParameterState(alpha=st_.alpha, theta=st_.theta, v=st_.v[perm], u=st_.u[perm], tau_v=1.0, tau_u=1.0)
    assert np.allclose(linear_predictor(pre.spec, st2, data2), linear_predictor(pre.spec, st_, data)[perm], atol=1e-12)


def test_depleted_cells_masked():
    g = build_graph([("A", "B")], ["A", "B"])
    cases = np.array([[50, 10, 10], [1, 1, 1]])
    panel = CaseSeriesPanel(("A", "B"), np.datetime64("2020-04-01") + np.arange(3), cases,
                            np.zeros_like(cases), np.array([40.0, 1000.0]))
    pre = catalog("2A")
    with pytest.warns(DepletedSusceptibles):
        data = build_model_data(panel, g, pre, 0.0)
    assert data.mask.tolist() == [[False, False], [True, True]]
    assert data.n_cells == 2
    with pytest.warns(DepletedSusceptibles):
        assert log_mean(pre.spec, zero_state(pre.spec, data), data, 0, 1) == -math.inf


def test_lognormal_data_uses_three_day_average():
    g, panel, preds, mob = _fixture()
    pre = catalog("3D-2")
    data = build_model_data(panel, g, pre, 0.25)
    y3 = three_day_average(panel).values
    assert np.allclose(data.response, np.log(y3[:, 1:] + 1))
    assert np.allclose(data.self_lag, np.log(y3[:, :-1] + 1))


def test_incompatible_data():
    g, panel, preds, mob = _fixture()
    with pytest.raises(IncompatibleData):
        build_model_data(panel, g, catalog("mobility-1"), 0.25, preds, None)
    with pytest.raises(IncompatibleData):
        build_model_data(panel, g, catalog("3A"), 0.25)


@pytest.mark.parametrize("name", list(CATALOG))
def test_flatten_roundtrip(name):
    pre = catalog(name)
    g, panel, preds, mob = _fixture()
    data = build_model_data(panel, g, pre, 0.25, preds, mob)
    st_ = _random_state(pre, data)
    flat = flatten_state(pre, st_)
    assert len(flat) == len(parameter_names(pre, data))
    back = unflatten_state(pre, data, flat)
    assert np.array_equal(flatten_state(pre, back), flat)
    assert np.array_equal(linear_predictor(pre.spec, back, data), linear_predictor(pre.spec, st_, data))


def test_parameter_names_layout():
    g, panel, preds, mob = _fixture()
    pre = catalog("4A")
    names = parameter_names(pre, build_model_data(panel, g, pre, 0.25, preds))
    assert names[:9] == ["alpha0", "alpha1", "alpha2", "theta1", "theta2", "theta3", "gamma1", "gamma2", "gamma3"]
    assert names[9:13] == ["v_A", "v_B", "v_C", "v_D"]
    assert names[-2:] == ["tau_v", "tau_u"]


def test_data_digest_sensitive_to_response():
    g, panel, preds, mob = _fixture()
    pre = catalog("2A")
    d1 = build_model_data(panel, g, pre, 0.25).digest()
    c2 = panel.cases.copy()
    c2[0, -1] += 1
    panel2 = CaseSeriesPanel(IDS, panel.dates, c2, panel.deaths, panel.population)
    assert build_model_data(panel2, g, pre, 0.25).digest() != d1
    assert build_model_data(panel, g, pre, 0.25).digest() == d1
