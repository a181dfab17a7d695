"""Model catalog, parameter state, model data bundle and log-mean evaluation.

The expected count of a cell (area i, day j >= 1) is

    log mu_ij = log S_ij + alpha0 + alpha1 * log(y_{i,j-1} + 1)
                + alpha2 * log(sum_{k ~ i} y_{k,j-1} + 1)
                + x_i . beta + v_i (or v_ij) + u_i + eta_{period(j)} * w_ij

with each bracketed term present only when the preset enables it.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import Literal

import numpy as np
from scipy.special import gammaln

from .data import (
    CaseSeriesPanel,
    MobilityPanel,
    PredictorTable,
    accounting_susceptibles,
    three_day_average,
)
from .errors import DataError, DepletedSusceptibles, IncompatibleData, NegativeLambda, UnknownPreset
from .graph import AdjacencyGraph

log = logging.getLogger(__name__)

UHMode = Literal["none", "spatial", "spacetime", "spacetime_tvprec"]
PredictorMode = Literal["none", "fixed", "gvs"]
Kind = Literal["poisson_daily", "lognormal_3d"]


@dataclass(frozen=True)
class PropagatorSpec:
    include_self_lag: bool = True
    include_neighbor_lag: bool = False
    uh_mode: UHMode = "none"
    icar: bool = False
    predictor_mode: PredictorMode = "none"
    mobility: bool = False

    def __post_init__(self):
        if self.uh_mode not in ("none", "spatial", "spacetime", "spacetime_tvprec"):
            raise ValueError(f"bad uh_mode {self.uh_mode!r}")
        if self.predictor_mode not in ("none", "fixed", "gvs"):
            raise ValueError(f"bad predictor_mode {self.predictor_mode!r}")

    @property
    def uses_predictors(self) -> bool:
        return self.predictor_mode != "none"

    @property
    def spacetime(self) -> bool:
        return self.uh_mode in ("spacetime", "spacetime_tvprec")

    def terms(self) -> list[str]:
        out = ["intercept"]
        if self.include_self_lag:
            out.append("self_lag")
        if self.include_neighbor_lag:
            out.append("neighbor_lag")
        if self.uses_predictors:
            out.append(f"predictors[{self.predictor_mode}]")
        if self.uh_mode != "none":
            out.append(f"uh[{self.uh_mode}]")
        if self.icar:
            out.append("icar")
        if self.mobility:
            out.append("mobility")
        return out


@dataclass(frozen=True)
class DataModelKind:
    kind: Kind = "poisson_daily"
    tv_obs_precision: bool = False

    def __post_init__(self):
        if self.kind not in ("poisson_daily", "lognormal_3d"):
            raise ValueError(f"bad data model kind {self.kind!r}")
        if self.tv_obs_precision and self.kind != "lognormal_3d":
            raise ValueError("time-varying observation precision needs the lognormal_3d model")


@dataclass(frozen=True)
class ModelPreset:
    name: str
    spec: PropagatorSpec
    data_model: DataModelKind = DataModelKind()
    description: str = ""


def _daily(name, desc, **kw):
    return ModelPreset(name, PropagatorSpec(**kw), DataModelKind("poisson_daily"), desc)


def _smooth(name, desc, tv=False, **kw):
    return ModelPreset(name, PropagatorSpec(**kw), DataModelKind("lognormal_3d", tv), desc)


_SL, _NB = {"include_self_lag": True}, {"include_self_lag": True, "include_neighbor_lag": True}

CATALOG: dict[str, ModelPreset] = {p.name: p for p in [
    _daily("1", "self lag + v_i + u_i (convolution)", **_SL, uh_mode="spatial", icar=True),
    _daily("2A", "self lag + v_i", **_SL, uh_mode="spatial"),
    _daily("2B", "2A + fixed predictors", **_SL, uh_mode="spatial", predictor_mode="fixed"),
    _daily("3A", "2A + GVS predictors", **_SL, uh_mode="spatial", predictor_mode="gvs"),
    _daily("3B", "1 + GVS predictors", **_SL, uh_mode="spatial", icar=True, predictor_mode="gvs"),
    _daily("4A", "neighbour lag + v_i + u_i + GVS predictors", **_NB, uh_mode="spatial", icar=True,
           predictor_mode="gvs"),
    _daily("4B", "neighbour lag + v_i + GVS predictors", **_NB, uh_mode="spatial", predictor_mode="gvs"),
    _daily("4C", "neighbour lag + v_i", **_NB, uh_mode="spatial"),
    _daily("5A", "neighbour lag + v_i + fixed predictors", **_NB, uh_mode="spatial", predictor_mode="fixed"),
    _daily("5B", "5A + u_i", **_NB, uh_mode="spatial", icar=True, predictor_mode="fixed"),
    _daily("6A", "5B with space-time v_ij", **_NB, uh_mode="spacetime", icar=True, predictor_mode="fixed"),
    _daily("6B", "5B with space-time v_ij and per-day precision", **_NB, uh_mode="spacetime_tvprec",
           icar=True, predictor_mode="fixed"),
    _smooth("3D-1", "self lag + u_i", **_SL, icar=True),
    _smooth("3D-2", "self lag + v_i + u_i", **_SL, uh_mode="spatial", icar=True),
    _smooth("3D-3", "self lag + u_i + v_ij", **_SL, uh_mode="spacetime", icar=True),
    _smooth("3D-4", "3D-2 with per-day observation precision", tv=True, **_SL, uh_mode="spatial", icar=True),
    _smooth("3D-5", "self lag + v_i + fixed predictors", **_SL, uh_mode="spatial", predictor_mode="fixed"),
    _smooth("3D-6", "3D-5 + neighbour lag", **_NB, uh_mode="spatial", predictor_mode="fixed"),
    _daily("mobility-1", "neighbour lag + v_i + fixed predictors + period work-index effects", **_NB,
           uh_mode="spatial", predictor_mode="fixed", mobility=True),
    _daily("mobility-2", "mobility-1 without the work index", **_NB, uh_mode="spatial",
           predictor_mode="fixed"),
    _daily("mobility-3", "mobility-1 without the neighbour lag", **_SL, uh_mode="spatial",
           predictor_mode="fixed", mobility=True),
]}


def catalog(name: str) -> ModelPreset:
    """Look up a preset. State prefixes such as ``SC-5A`` or ``NJ-5B`` are accepted."""
    key = str(name).strip()
    upper = key.upper()
    for prefix in ("SC-", "NJ-"):
        if upper.startswith(prefix):
            key = key[len(prefix):]
            upper = upper[len(prefix):]
    if upper.startswith("3D-"):
        key = "3D-" + key[3:]
    elif upper.startswith("MOBILITY-"):
        key = "mobility-" + key[9:]
    else:
        key = upper
    try:
        return CATALOG[key]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(CATALOG)}") from None


def catalog_table() -> str:
    cols = ["self", "nbr", "uh", "icar", "pred", "mob", "data"]
    width = {"uh": 17, "data": 10}
    lines = [f"{'preset':<11}" + "".join(f"{c:<{width.get(c, 8)}}" for c in cols) + "description"]
    for p in CATALOG.values():
        s = p.spec
        row = [
            "x" if s.include_self_lag else "-",
            "x" if s.include_neighbor_lag else "-",
            s.uh_mode,
            "x" if s.icar else "-",
            s.predictor_mode,
            "x" if s.mobility else "-",
            "pois" if p.data_model.kind == "poisson_daily" else ("lnorm-tv" if p.data_model.tv_obs_precision else "lnorm"),
        ]
        lines.append(f"{p.name:<11}" + "".join(f"{v:<{width.get(c, 8)}}" for c, v in zip(cols, row))
                     + p.description)
    return "\n".join(lines)


@dataclass
class ParameterState:
    """One MCMC state. Fields a preset does not use stay ``None``.

    ``alpha`` always has three entries; alpha2 is ignored without a neighbour
    lag. Space-time ``v`` has shape (n_areas, J - 1), aligned with the modelled
    days 1..J-1, and per-day precisions have length J - 1.
    """

    alpha: np.ndarray
    theta: np.ndarray | None = None
    gamma: np.ndarray | None = None
    v: np.ndarray | None = None
    u: np.ndarray | None = None
    tau_v: float | np.ndarray | None = None
    tau_u: float | None = None
    tau_y: float | np.ndarray | None = None
    eta: np.ndarray | None = None

    def copy(self) -> "ParameterState":
        kw = {}
        for f in fields(self):
            val = getattr(self, f.name)
            kw[f.name] = val.copy() if isinstance(val, np.ndarray) else val
        return ParameterState(**kw)

    def beta(self) -> np.ndarray | None:
        """Effective predictor coefficients gamma * theta (theta alone without GVS)."""
        if self.theta is None:
            return None
        return self.theta if self.gamma is None else self.gamma * self.theta


@dataclass(frozen=True)
class ModelData:
    """Everything the likelihood needs, laid out on the (n_areas, J - 1) grid of modelled cells.

    Column ``c`` of each cell matrix is panel day ``j = c + 1``; day 0 is only
    conditioned on.
    """

    graph: AdjacencyGraph
    kind: Kind
    dates: np.ndarray  # (J,)
    observed: np.ndarray  # (n, J) counts on the modelled scale (daily y or 3-day mean)
    S: np.ndarray  # (n, J)
    lam: float
    response: np.ndarray  # (n, J-1) y or log(y3d + 1)
    mask: np.ndarray  # (n, J-1) bool, cells entering the likelihood
    logS: np.ndarray  # (n, J-1), 0 where masked out
    self_lag: np.ndarray  # (n, J-1)
    nb_lag: np.ndarray  # (n, J-1)
    X: np.ndarray | None = None  # (n, P) standardised predictors
    predictor_names: tuple[str, ...] = ()
    work: np.ndarray | None = None  # (n, J-1)
    period: np.ndarray | None = None  # (J-1,) 0-based period of each modelled day
    n_periods: int = 0
    log_norm: np.ndarray = field(default=None, repr=False)  # per-cell constant of the Poisson log pmf

    def __post_init__(self):
        if self.log_norm is None:
            if self.kind == "poisson_daily":
                c = np.where(self.mask, -gammaln(self.response + 1.0), 0.0)
            else:
                c = np.where(self.mask, -0.5 * np.log(2 * np.pi), 0.0)
            object.__setattr__(self, "log_norm", c)

    @property
    def n_areas(self) -> int:
        return self.graph.n_areas

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_cells(self) -> int:
        return int(self.mask.sum())

    @property
    def area_ids(self) -> tuple[str, ...]:
        return self.graph.area_ids

    def cell_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(area, day) of every likelihood cell in storage order (area-major, day 1-based)."""
        area, col = np.nonzero(self.mask)
        return area, col + 1

    def prior_only(self) -> "ModelData":
        """Copy with every cell removed from the likelihood."""
        return replace(self, mask=np.zeros_like(self.mask), log_norm=None)

    def digest(self) -> str:
        """Digest of the response cells, used to check that runs are comparable."""
        h = hashlib.sha256()
        h.update(self.kind.encode())
        h.update(np.ascontiguousarray(self.mask).tobytes())
        h.update(np.ascontiguousarray(np.where(self.mask, self.response, 0.0)).tobytes())
        h.update(np.ascontiguousarray(self.dates.astype("datetime64[D]").astype(np.int64)).tobytes())
        return h.hexdigest()[:16]


def build_model_data(panel: CaseSeriesPanel, graph: AdjacencyGraph, preset: ModelPreset, lam: float,
                     predictors: PredictorTable | None = None,
                     mobility: MobilityPanel | None = None) -> ModelData:
    """Assemble the likelihood inputs for ``preset`` from a panel and auxiliary tables.

    Susceptibles always follow the daily counts. For the lognormal preset the
    lags and the response use the trailing 3-day mean. A mobility preset
    restricts the modelled window to the mobility panel's days.
    """
    spec = preset.spec
    if tuple(panel.area_ids) != graph.area_ids:
        raise DataError("panel area order differs from the adjacency graph")
    if panel.population is None:
        raise DataError("panel has no population")
    if spec.uses_predictors and predictors is None:
        raise IncompatibleData(f"preset {preset.name} needs a predictor table")
    if spec.mobility and mobility is None:
        raise IncompatibleData(f"preset {preset.name} needs a mobility file")
    if lam < 0:
        raise NegativeLambda(f"asymptomatic multiplier must be >= 0, got {lam}")

    S = accounting_susceptibles(panel.population, panel.cases, panel.deaths, lam)
    if preset.data_model.kind == "lognormal_3d":
        observed = three_day_average(panel).values
    else:
        observed = panel.cases.astype(float)
    dates = panel.dates

    work = period = None
    n_periods = 0
    if spec.mobility:
        pos = np.searchsorted(dates, mobility.dates)
        if (pos >= len(dates)).any() or (dates[np.minimum(pos, len(dates) - 1)] != mobility.dates).any():
            raise DataError("mobility dates fall outside the case panel")
        if tuple(mobility.area_ids) != graph.area_ids:
            raise DataError("mobility area order differs from the adjacency graph")
        keep = pos
        dates, S, observed = dates[keep], S[:, keep], observed[:, keep]
        work = mobility.work[:, 1:]
        period = mobility.period_index[1:] - 1
        n_periods = mobility.n_periods

    if observed.shape[1] < 2:
        raise DataError("need at least two days to model one lagged cell")
    prev = observed[:, :-1]
    S_cells = S[:, 1:]
    mask = S_cells > 0
    n_drop = int((~mask).sum())
    if n_drop:
        warnings.warn(f"{n_drop} cells with S = 0 dropped from the likelihood", DepletedSusceptibles, stacklevel=2)
    logS = np.log(np.where(mask, S_cells, 1.0))
    if preset.data_model.kind == "lognormal_3d":
        response = np.log(observed[:, 1:] + 1.0)
    else:
        response = observed[:, 1:]

    X = names = None
    if spec.uses_predictors:
        if tuple(predictors.area_ids) != graph.area_ids:
            raise DataError("predictor area order differs from the adjacency graph")
        X, names = np.asarray(predictors.values, dtype=float), tuple(predictors.names)

    return ModelData(
        graph=graph, kind=preset.data_model.kind, dates=dates, observed=observed, S=S, lam=float(lam),
        response=response, mask=mask, logS=logS,
        self_lag=np.log(prev + 1.0),
        nb_lag=np.log(graph.neighbor_sums(prev) + 1.0),
        X=X, predictor_names=names or (), work=work, period=period, n_periods=n_periods,
    )


def term_contributions(spec: PropagatorSpec, state: ParameterState, data: ModelData) -> dict[str, np.ndarray]:
    """Each enabled propagator term, broadcastable to the (n, J-1) cell grid."""
    out: dict[str, np.ndarray] = {"intercept": np.asarray(state.alpha[0], dtype=float)}
    if spec.include_self_lag:
        out["self_lag"] = state.alpha[1] * data.self_lag
    if spec.include_neighbor_lag:
        out["neighbor_lag"] = state.alpha[2] * data.nb_lag
    if spec.uses_predictors:
        out["predictors"] = (data.X @ state.beta())[:, None]
    if spec.uh_mode == "spatial":
        out["uh"] = state.v[:, None]
    elif spec.spacetime:
        out["uh"] = state.v
    if spec.icar:
        out["icar"] = state.u[:, None]
    if spec.mobility:
        out["mobility"] = state.eta[data.period][None, :] * data.work
    return out


def linear_predictor(spec: PropagatorSpec, state: ParameterState, data: ModelData) -> np.ndarray:
    """log mu for every cell of the (n, J-1) grid (masked cells carry log S = 0)."""
    eta = data.logS.copy()
    for term in term_contributions(spec, state, data).values():
        eta = eta + term
    return eta


def log_mean(spec: PropagatorSpec, state: ParameterState, data: ModelData, i: int, j: int) -> float:
    """log mu_ij for area ``i`` and panel day ``j >= 1``."""
    if not 1 <= j < data.n_days:
        raise DataError(f"day index {j} outside [1, {data.n_days})")
    c = j - 1
    S = data.S[i, j]
    if S <= 0:
        warnings.warn(f"S = 0 at area {i}, day {j}", DepletedSusceptibles, stacklevel=2)
        return float("-inf")
    val = np.log(S) + state.alpha[0]
    if spec.include_self_lag:
        val += state.alpha[1] * data.self_lag[i, c]
    if spec.include_neighbor_lag:
        val += state.alpha[2] * data.nb_lag[i, c]
    if spec.uses_predictors:
        val += float(data.X[i] @ state.beta())
    if spec.uh_mode == "spatial":
        val += state.v[i]
    elif spec.spacetime:
        val += state.v[i, c]
    if spec.icar:
        val += state.u[i]
    if spec.mobility:
        val += state.eta[data.period[c]] * data.work[i, c]
    return float(val)


def zero_state(spec: PropagatorSpec, data: ModelData, dm: DataModelKind = DataModelKind()) -> ParameterState:
    """All coefficients and effects zero, precisions 1."""
    n, C = data.n_areas, data.n_days - 1
    P = len(data.predictor_names)
    st = ParameterState(alpha=np.zeros(3))
    if spec.uses_predictors:
        st.theta = np.zeros(P)
        if spec.predictor_mode == "gvs":
            st.gamma = np.ones(P, dtype=np.int64)
    if spec.uh_mode == "spatial":
        st.v, st.tau_v = np.zeros(n), 1.0
    elif spec.uh_mode == "spacetime":
        st.v, st.tau_v = np.zeros((n, C)), 1.0
    elif spec.uh_mode == "spacetime_tvprec":
        st.v, st.tau_v = np.zeros((n, C)), np.ones(C)
    if spec.icar:
        st.u, st.tau_u = np.zeros(n), 1.0
    if dm.kind == "lognormal_3d":
        st.tau_y = np.ones(C) if dm.tv_obs_precision else 1.0
    if spec.mobility:
        st.eta = np.zeros(data.n_periods)
    return st


def parameter_names(preset: ModelPreset, data: ModelData) -> list[str]:
    """Flat column names for a state, in storage order."""
    spec, dm = preset.spec, preset.data_model
    ids = data.area_ids
    days = range(1, data.n_days)
    names = ["alpha0"]
    if spec.include_self_lag:
        names.append("alpha1")
    if spec.include_neighbor_lag:
        names.append("alpha2")
    P = len(data.predictor_names)
    if spec.uses_predictors:
        names += [f"theta{k + 1}" for k in range(P)]
        if spec.predictor_mode == "gvs":
            names += [f"gamma{k + 1}" for k in range(P)]
    if spec.uh_mode == "spatial":
        names += [f"v_{a}" for a in ids]
    elif spec.spacetime:
        names += [f"v_{a}_{j}" for a in ids for j in days]
    if spec.icar:
        names += [f"u_{a}" for a in ids]
    if spec.uh_mode in ("spatial", "spacetime"):
        names.append("tau_v")
    elif spec.uh_mode == "spacetime_tvprec":
        names += [f"tau_v_{j}" for j in days]
    if spec.icar:
        names.append("tau_u")
    if dm.kind == "lognormal_3d":
        names += [f"tau_y_{j}" for j in days] if dm.tv_obs_precision else ["tau_y"]
    if spec.mobility:
        names += [f"eta_{p + 1}" for p in range(data.n_periods)]
    return names


def flatten_state(preset: ModelPreset, state: ParameterState) -> np.ndarray:
    spec, dm = preset.spec, preset.data_model
    parts = [state.alpha[:1]]
    if spec.include_self_lag:
        parts.append(state.alpha[1:2])
    if spec.include_neighbor_lag:
        parts.append(state.alpha[2:3])
    if spec.uses_predictors:
        parts.append(state.theta)
        if spec.predictor_mode == "gvs":
            parts.append(state.gamma)
    if spec.uh_mode != "none":
        parts.append(np.ravel(state.v))
    if spec.icar:
        parts.append(state.u)
    if spec.uh_mode != "none":
        parts.append(np.atleast_1d(state.tau_v))
    if spec.icar:
        parts.append(np.atleast_1d(state.tau_u))
    if dm.kind == "lognormal_3d":
        parts.append(np.atleast_1d(state.tau_y))
    if spec.mobility:
        parts.append(state.eta)
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def unflatten_state(preset: ModelPreset, data: ModelData, flat: np.ndarray) -> ParameterState:
    spec, dm = preset.spec, preset.data_model
    n, C, P = data.n_areas, data.n_days - 1, len(data.predictor_names)
    pos = 0

    def take(k):
        nonlocal pos
        out = np.asarray(flat[pos:pos + k], dtype=float)
        pos += k
        return out

    st = ParameterState(alpha=np.zeros(3))
    st.alpha[0] = take(1)[0]
    if spec.include_self_lag:
        st.alpha[1] = take(1)[0]
    if spec.include_neighbor_lag:
        st.alpha[2] = take(1)[0]
    if spec.uses_predictors:
        st.theta = take(P)
        if spec.predictor_mode == "gvs":
            st.gamma = take(P).astype(np.int64)
    if spec.uh_mode == "spatial":
        st.v = take(n)
    elif spec.spacetime:
        st.v = take(n * C).reshape(n, C)
    if spec.icar:
        st.u = take(n)
    if spec.uh_mode in ("spatial", "spacetime"):
        st.tau_v = float(take(1)[0])
    elif spec.uh_mode == "spacetime_tvprec":
        st.tau_v = take(C)
    if spec.icar:
        st.tau_u = float(take(1)[0])
    if dm.kind == "lognormal_3d":
        st.tau_y = take(C) if dm.tv_obs_precision else float(take(1)[0])
    if spec.mobility:
        st.eta = take(data.n_periods)
    if pos != len(flat):
        raise DataError(f"flat state has {len(flat)} values, preset expects {pos}")
    return st
