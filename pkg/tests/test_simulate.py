import warnings

import numpy as np
import pytest
from scipy import stats

from stsir.cli import generate_predictors
from stsir.data import accounting_susceptibles, ingest_cases, read_cases_csv
from stsir.errors import DataError, DepletedEverywhere, ExplosiveTrajectory
from stsir.graph import build_graph, lattice_graph
from stsir.inference import log_likelihood_pointwise
from stsir.models import ParameterState, build_model_data, catalog
from stsir.simulate import SimScenario, sample_icar, simulate_panel, with_state, write_cases_csv

S0 = 1e5


def _scenario(model="2A", alpha=(np.log(5 / S0), 0.0, 0.0), n_days=100, graph=None, seed_inf=5, **state):
    g = graph or lattice_graph(2, 5)
    st = ParameterState(alpha=np.array(alpha, float), **state)
    pre = catalog(model)
    if pre.spec.uh_mode == "spatial" and st.v is None:
        st.v, st.tau_v = np.zeros(g.n_areas), 1.0
    return SimScenario(g, n_days, S0, st, pre, seed_inf)


def test_iid_poisson_mean():
    sc = _scenario(n_days=1001)
    res = simulate_panel(sc, np.random.default_rng(0))
    y = res.panel.cases[:, 1:].astype(float)
    expect = 5 * res.S[:, 1:] / S0
    se = np.sqrt(expect.sum()) / y.size
    assert abs(y.mean() - expect.mean()) < 3 * se
    assert y.size == 10_000


def test_zero_seed_gives_zero_panel():
    sc = _scenario(alpha=(-20.0, 0.5, 0.0), seed_inf=0)
    res = simulate_panel(sc, np.random.default_rng(1))
    assert res.panel.cases.sum() == 0


def test_fixed_seed_reproducible():
    sc = _scenario(alpha=(np.log(20 / 21 ** 0.3 / S0), 0.3, 0.0), v=None, tau_v=50.0)
    a = simulate_panel(sc, np.random.default_rng(9))
    b = simulate_panel(sc, np.random.default_rng(9))
    assert np.array_equal(a.panel.cases, b.panel.cases)
    assert np.array_equal(a.state.v, b.state.v)


def test_neighbor_effect_isolated_components():
    g = build_graph([("A", "B"), ("C", "D")], ["A", "B", "C", "D"])
    sc = _scenario("4C", alpha=(-14.0, 0.3, 0.6), graph=g, n_days=60,
                   seed_inf=np.array([50.0, 50.0, 0.0, 0.0]))
    totals = []
    for s in range(20):
        y = simulate_panel(sc, np.random.default_rng(s)).panel.cases
        totals.append((y[:2, 1:].sum(), y[2:, 1:].sum()))
    seeded, unseeded = np.array(totals).T
    floor = 60 * 2 * S0 * np.exp(-14.0)  # expected count with no lag contributions
    assert unseeded.mean() < 3 * floor
    assert stats.mannwhitneyu(seeded, unseeded, alternative="greater").pvalue < 1e-4


def test_simulated_susceptibles_follow_accounting():
    sc = _scenario(alpha=(np.log(20 / 21 ** 0.3 / S0), 0.3, 0.0))
    sc.death_rate = 0.05
    res = simulate_panel(sc, np.random.default_rng(2))
    S = accounting_susceptibles(res.panel.population, res.panel.cases, res.panel.deaths, sc.lam)
    assert np.array_equal(S, res.S)
    assert (np.diff(res.S, axis=1) <= 0).all() and (res.S >= 0).all()
    assert res.panel.deaths.sum() > 0


def test_likelihood_prefers_truth():
    wins = 0
    sc = _scenario(alpha=(np.log(20 / 21 ** 0.3 / S0), 0.3, 0.0), n_days=80)
    pre = catalog("2A")
    for s in range(20):
        res = simulate_panel(sc, np.random.default_rng(100 + s))
        data = build_model_data(res.panel, sc.graph, pre, sc.lam)
        bad = res.state.copy()
        bad.alpha[1] *= 1.5
        wins += log_likelihood_pointwise(res.state, pre, data).mean() > log_likelihood_pointwise(bad, pre, data).mean()
    assert wins == 20


def test_intercept_only_chi_square():
    passes = 0
    for s in range(40):
        sc = _scenario(alpha=(np.log(5 / S0), 0.0, 0.0), n_days=201)
        res = simulate_panel(sc, np.random.default_rng(500 + s))
        y = res.panel.cases[:, 1:].ravel()
        mu = (5 * res.S[:, 1:] / S0).ravel()
        # bins 0..11 and >= 12 under the per-cell Poisson means
        edges = np.arange(13)
        obs = np.array([(y == k).sum() for k in edges[:-1]] + [(y >= 12).sum()])
        exp = np.array([stats.poisson.pmf(k, mu).sum() for k in edges[:-1]] + [stats.poisson.sf(11, mu).sum()])
        passes += stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue > 0.01
    assert passes >= 38


def test_explosion_guard():
    sc = _scenario(alpha=(0.0, 1.0, 0.0), seed_inf=1000)
    with pytest.raises(ExplosiveTrajectory):
        simulate_panel(sc, np.random.default_rng(0))


def test_depleted_everywhere_warns():
    sc = _scenario(alpha=(0.0, 0.0, 0.0), n_days=60)
    with pytest.warns(DepletedEverywhere):
        res = simulate_panel(sc, np.random.default_rng(0))
    assert res.warnings


def test_scenario_validation():
    with pytest.raises(DataError):
        _scenario(seed_inf=-1)
    with pytest.raises(DataError):
        SimScenario(lattice_graph(2, 2), 10, S0, ParameterState(alpha=np.zeros(3), theta=np.zeros(3)),
                     catalog("5A"), 1)


def test_icar_draw_sums_to_zero_and_precision():
    g = lattice_graph(3, 4)
    draws = np.array([sample_icar(g, 4.0, np.random.default_rng(s)) for s in range(4000)])
    assert np.allclose(draws.sum(axis=1), 0, atol=1e-10)
    # E[sum over edges (u_i - u_k)^2] = (n - 1) / tau for a connected graph
    e = g.edges
    ss = ((draws[:, e[:, 0]] - draws[:, e[:, 1]]) ** 2).sum(axis=1)
    assert ss.mean() == pytest.approx((g.n_areas - 1) / 4.0, rel=0.05)


@pytest.mark.parametrize("name", ["1", "4A", "5B", "6A", "6B", "3D-1", "3D-3", "3D-4", "3D-6", "mobility-1"])
def test_every_preset_simulates(name):
    g = lattice_graph(2, 3)
    pre = catalog(name)
    st = ParameterState(alpha=np.array([np.log(10 / S0) - 0.3 * np.log(11), 0.3, 0.05]),
                        theta=np.array([0.1, 0.0, -0.1]), tau_v=50.0, tau_u=20.0, eta=np.array([0.002, -0.001]),
                        tau_y=np.full(59, 20.0) if pre.data_model.tv_obs_precision else 20.0)
    if pre.spec.uh_mode == "spacetime_tvprec":
        st.tau_v = np.full(59, 50.0)
    sc = SimScenario(g, 60, S0, st, pre, 10, predictors=generate_predictors(g.area_ids, np.random.default_rng(0)),
                     work=np.random.default_rng(1).normal(-20, 5, (6, 60)), period_lengths=(20, 40))
    res = simulate_panel(sc, np.random.default_rng(3))
    assert res.panel.cases.shape == (6, 60) and res.panel.cases[:, 1:].sum() > 0
    data = build_model_data(res.panel, g, pre, sc.lam, res.predictors, res.mobility)
    assert np.isfinite(log_likelihood_pointwise(res.state, pre, data)).all()


def test_csv_roundtrip(tmp_path):
    sc = _scenario(alpha=(np.log(20 / 21 ** 0.3 / S0), 0.3, 0.0), n_days=30)
    res = simulate_panel(sc, np.random.default_rng(4))
    write_cases_csv(res.panel, tmp_path / "cases.csv")
    back = read_cases_csv(tmp_path / "cases.csv", sc.graph.area_ids)
    assert np.array_equal(back.cases, res.panel.cases)
    assert np.array_equal(back.dates, res.panel.dates)


def test_with_state_replaces_fields():
    sc = _scenario()
    sc2 = with_state(sc, tau_v=9.0)
    assert sc2.true_state.tau_v == 9.0 and sc.true_state.tau_v == 1.0
