"""Forward simulation of case panels from any catalog preset with known parameters."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import CaseSeriesPanel, MobilityPanel, PredictorTable, changepoint_index
from .errors import DataError, DepletedEverywhere, ExplosiveTrajectory
from .graph import AdjacencyGraph
from .models import ModelPreset, ParameterState
from .outputs import atomic_write_text

EXPLOSION_FACTOR = 10.0


@dataclass
class SimScenario:
    graph: AdjacencyGraph
    n_days: int
    population: np.ndarray
    true_state: ParameterState
    model: ModelPreset
    seed_infections: np.ndarray
    lam: float = 0.25
    death_rate: float = 0.0
    death_lag: int = 14
    predictors: PredictorTable | None = None
    work: np.ndarray | None = None  # (n_areas, n_days)
    period_lengths: tuple[int, ...] | None = None
    start_date: str = "2020-03-06"

    def __post_init__(self):
        n = self.graph.n_areas
        self.population = np.broadcast_to(np.asarray(self.population, dtype=float), (n,)).copy()
        self.seed_infections = np.broadcast_to(np.asarray(self.seed_infections, dtype=float), (n,)).copy()
        if (self.population <= 0).any():
            raise DataError("populations must be positive")
        if (self.seed_infections < 0).any():
            raise DataError("seed infections must be non-negative")
        if self.n_days < 2:
            raise DataError("need at least two days")
        spec = self.model.spec
        if spec.uses_predictors and self.predictors is None:
            raise DataError(f"preset {self.model.name} needs predictors")
        if spec.mobility:
            if self.work is None or self.period_lengths is None:
                raise DataError(f"preset {self.model.name} needs a work index and period lengths")
            if np.shape(self.work) != (n, self.n_days):
                raise DataError("work index must be n_areas x n_days")


@dataclass
class SimResult:
    panel: CaseSeriesPanel
    state: ParameterState  # true parameters with the realised random effects
    S: np.ndarray
    latent: np.ndarray  # series the propagator lags on (daily counts or 3-day level)
    mobility: MobilityPanel | None = None
    predictors: PredictorTable | None = None
    warnings: list[str] = field(default_factory=list)


def sample_icar(graph: AdjacencyGraph, tau_u: float, rng: np.random.Generator) -> np.ndarray:
    """Draw from the ICAR prior restricted to the sum-to-zero subspace of each component."""
    W = graph.adjacency_matrix
    Q = tau_u * (np.diag(W.sum(axis=1)) - W)
    vals, vecs = np.linalg.eigh(Q)
    keep = vals > 1e-9 * vals.max()
    z = rng.standard_normal(int(keep.sum()))
    return vecs[:, keep] @ (z / np.sqrt(vals[keep]))


def realize_effects(scenario: SimScenario, rng: np.random.Generator) -> ParameterState:
    """Fill in random effects missing from ``true_state`` by drawing them from their priors."""
    st = scenario.true_state.copy()
    spec, n, C = scenario.model.spec, scenario.graph.n_areas, scenario.n_days - 1
    if spec.uh_mode != "none" and st.v is None:
        if st.tau_v is None:
            raise DataError("true_state needs tau_v to draw v")
        tau = np.asarray(st.tau_v, dtype=float)
        if spec.uh_mode == "spatial":
            st.v = rng.standard_normal(n) / np.sqrt(tau)
        else:
            st.v = rng.standard_normal((n, C)) / np.sqrt(np.broadcast_to(tau, (C,)))[None, :]
    if spec.icar and st.u is None:
        if st.tau_u is None:
            raise DataError("true_state needs tau_u to draw u")
        st.u = sample_icar(scenario.graph, st.tau_u, rng)
    if spec.uses_predictors and st.theta is None:
        raise DataError("true_state needs theta for a predictor preset")
    if scenario.model.data_model.kind == "lognormal_3d" and st.tau_y is None:
        raise DataError("true_state needs tau_y for a lognormal preset")
    return st


def simulate_panel(scenario: SimScenario, rng: np.random.Generator) -> SimResult:
    """Run the propagator forward day by day and draw counts.

    Day 0 holds ``seed_infections``. For each later day the susceptibles follow
    the accounting equation, the log mean is evaluated from the simulated
    history, and counts are drawn (Poisson, or log-normal for the 3-day model,
    whose daily counts are the rounded level).
    """
    sc, spec = scenario, scenario.model.spec
    st = realize_effects(sc, rng)
    n, J = sc.graph.n_areas, sc.n_days
    lognormal = sc.model.data_model.kind == "lognormal_3d"
    W = sc.graph.adjacency_matrix
    xb = sc.predictors.values @ st.beta() if spec.uses_predictors else np.zeros(n)
    period = changepoint_index(sc.period_lengths, J) - 1 if spec.mobility else None

    latent = np.zeros((n, J))
    cases = np.zeros((n, J), dtype=np.int64)
    deaths = np.zeros((n, J), dtype=np.int64)
    S = np.zeros((n, J))
    latent[:, 0] = sc.seed_infections
    cases[:, 0] = np.rint(sc.seed_infections).astype(np.int64)
    S[:, 0] = sc.population
    depleted_day = None
    for j in range(1, J):
        S[:, j] = np.maximum(0.0, S[:, j - 1] - (1.0 + sc.lam) * cases[:, j - 1] - deaths[:, j - 1])
        prev = latent[:, j - 1]
        alive = S[:, j] > 0
        eta = np.log(np.where(alive, S[:, j], 1.0)) + st.alpha[0] + xb
        if spec.include_self_lag:
            eta = eta + st.alpha[1] * np.log(prev + 1.0)
        if spec.include_neighbor_lag:
            eta = eta + st.alpha[2] * np.log(W @ prev + 1.0)
        if spec.uh_mode == "spatial":
            eta = eta + st.v
        elif spec.uh_mode != "none":
            eta = eta + st.v[:, j - 1]
        if spec.icar:
            eta = eta + st.u
        if spec.mobility:
            eta = eta + st.eta[period[j]] * sc.work[:, j]
        with np.errstate(over="ignore"):
            mu = np.where(alive, np.exp(eta), 0.0)
        if (mu > EXPLOSION_FACTOR * S[:, j]).any():
            raise ExplosiveTrajectory(f"expected count exceeds {EXPLOSION_FACTOR:g} x S on day {j}")
        if lognormal:
            tau = np.broadcast_to(np.asarray(st.tau_y, dtype=float), (J - 1,))[j - 1]
            level = np.exp(rng.normal(eta, 1.0 / np.sqrt(tau))) - 1.0
            latent[:, j] = np.where(alive, np.maximum(level, 0.0), 0.0)
            cases[:, j] = np.rint(latent[:, j]).astype(np.int64)
        else:
            cases[:, j] = rng.poisson(mu)
            latent[:, j] = cases[:, j]
        if sc.death_rate > 0 and j >= sc.death_lag:
            deaths[:, j] = rng.binomial(cases[:, j - sc.death_lag], sc.death_rate)
        if depleted_day is None and not alive.any():
            depleted_day = j

    notes = []
    if depleted_day is not None and depleted_day < J / 2:
        msg = f"all areas depleted by day {depleted_day}"
        warnings.warn(msg, DepletedEverywhere, stacklevel=2)
        notes.append(msg)
    dates = np.datetime64(sc.start_date, "D") + np.arange(J)
    panel = CaseSeriesPanel(sc.graph.area_ids, dates, cases, deaths, sc.population.copy())
    mob = None
    if spec.mobility:
        mob = MobilityPanel(sc.graph.area_ids, dates, np.asarray(sc.work, dtype=float),
                            tuple(sc.period_lengths), period + 1)
    return SimResult(panel, st, S, latent, mob, sc.predictors, notes)


def _write_rows(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def write_cases_csv(panel: CaseSeriesPanel, path, state_name: str = "synthetic") -> None:
    """Write cumulative counts in the NYT ``date,county,state,fips,cases,deaths`` layout."""
    cum_c = np.cumsum(panel.cases, axis=1)
    cum_d = np.cumsum(panel.deaths, axis=1)
    rows = ([str(d), a, state_name, a, int(cum_c[i, j]), int(cum_d[i, j])]
            for j, d in enumerate(panel.dates) for i, a in enumerate(panel.area_ids))
    _write_rows(path, ["date", "county", "state", "fips", "cases", "deaths"], rows)


def write_population_csv(area_ids, population, path) -> None:
    _write_rows(path, ["fips", "population"], ([a, int(round(p))] for a, p in zip(area_ids, population)))


def write_predictors_csv(table: PredictorTable, path) -> None:
    rows = ([a, *(repr(float(x)) for x in row)] for a, row in zip(table.area_ids, table.raw))
    _write_rows(path, ["fips", *table.names], rows)


def write_mobility_csv(mob: MobilityPanel, path) -> None:
    rows = ([str(d), a, repr(float(mob.work[i, j]))]
            for j, d in enumerate(mob.dates) for i, a in enumerate(mob.area_ids))
    _write_rows(path, ["date", "fips", "work_index"], rows)


def write_adjacency_csv(graph: AdjacencyGraph, path) -> None:
    _write_rows(path, ["fips_a", "fips_b"], ([graph.area_ids[i], graph.area_ids[k]] for i, k in graph.edges))


def with_state(scenario: SimScenario, **changes) -> SimScenario:
    """Copy of ``scenario`` whose true state has the given fields replaced."""
    st = scenario.true_state.copy()
    for k, v in changes.items():
        setattr(st, k, v)
    return replace(scenario, true_state=st)
