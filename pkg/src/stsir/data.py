"""Ingestion and derived series: daily increments, 3-day averages, susceptibles,
asymptomatic multipliers and mobility change-point indices."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    EmptyDateRange,
    LengthMismatch,
    NegativeLambda,
    NonMonotoneDates,
    RateOutOfRange,
    TooShortSeries,
    UnknownAreaId,
)

log = logging.getLogger(__name__)

PREDICTOR_COLUMNS = ("pct_poverty", "pct_black", "mdi17")


@dataclass(frozen=True)
class CaseSeriesPanel:
    """Daily new cases and deaths, areas x days, in the graph's area order."""

    area_ids: tuple[str, ...]
    dates: np.ndarray  # datetime64[D], length J
    cases: np.ndarray  # (n_areas, J) int64
    deaths: np.ndarray  # (n_areas, J) int64
    population: np.ndarray | None = None  # (n_areas,) S_{i,0}
    n_clamped: int = 0

    def __post_init__(self):
        n, J = len(self.area_ids), len(self.dates)
        for name in ("cases", "deaths"):
            arr = getattr(self, name)
            if arr.shape != (n, J):
                raise DataError(f"{name} has shape {arr.shape}, expected {(n, J)}")
            if (arr < 0).any():
                raise DataError(f"{name} contains negative entries")
        if J > 1 and not (np.diff(self.dates) == np.timedelta64(1, "D")).all():
            raise NonMonotoneDates("panel dates must be consecutive days")
        if self.population is not None:
            pop = np.asarray(self.population, dtype=float)
            if pop.shape != (n,) or (pop <= 0).any():
                raise DataError("population must be positive, one value per area")

    @property
    def n_areas(self) -> int:
        return len(self.area_ids)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def with_population(self, population) -> "CaseSeriesPanel":
        return replace(self, population=np.asarray(population, dtype=float))

    def select_dates(self, start, end) -> "CaseSeriesPanel":
        start, end = np.datetime64(start, "D"), np.datetime64(end, "D")
        keep = (self.dates >= start) & (self.dates <= end)
        if not keep.any():
            raise EmptyDateRange(f"no panel days in [{start}, {end}]")
        return replace(self, dates=self.dates[keep], cases=self.cases[:, keep], deaths=self.deaths[:, keep])


@dataclass(frozen=True)
class SmoothedPanel:
    area_ids: tuple[str, ...]
    dates: np.ndarray
    values: np.ndarray  # (n_areas, J) trailing 3-day means


@dataclass(frozen=True)
class SusceptibleTrajectory:
    S: np.ndarray  # (n_areas, J)
    lam: float


@dataclass(frozen=True)
class PredictorTable:
    """Area-level deprivation predictors; ``values`` are standardised."""

    area_ids: tuple[str, ...]
    names: tuple[str, ...]
    raw: np.ndarray  # (n_areas, P)
    values: np.ndarray = field(default=None)
    standardized: bool = True

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=float)
        if raw.shape != (len(self.area_ids), len(self.names)):
            raise DataError("predictor table shape does not match areas x names")
        if not np.isfinite(raw).all():
            raise DataError("predictor table has missing values")
        if self.values is None:
            if self.standardized:
                sd = raw.std(axis=0)
                if (sd == 0).any():
                    raise DataError("constant predictor cannot be standardised")
                vals = (raw - raw.mean(axis=0)) / sd
            else:
                vals = raw.copy()
            object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class MobilityPanel:
    """Work-index panel aligned to days, with the change-point period of each day (1-based)."""

    area_ids: tuple[str, ...]
    dates: np.ndarray
    work: np.ndarray  # (n_areas, J_m)
    period_lengths: tuple[int, ...]
    period_index: np.ndarray  # (J_m,) values in 1..P

    @property
    def n_periods(self) -> int:
        return len(self.period_lengths)


def normalize_fips(series: pd.Series) -> pd.Series:
    s = series.astype(str).str.strip()
    s = s.str.replace(r"\.0$", "", regex=True)
    return s.where(~s.str.fullmatch(r"\d{1,4}"), s.str.zfill(5))


def _daily_grid(start, end) -> np.ndarray:
    start, end = np.datetime64(start, "D"), np.datetime64(end, "D")
    if end < start:
        raise EmptyDateRange(f"date range [{start}, {end}] is empty")
    return np.arange(start, end + np.timedelta64(1, "D"), dtype="datetime64[D]")


def ingest_cases(raw_rows: pd.DataFrame, area_ids: Sequence[str], date_range=None,
                 population=None) -> CaseSeriesPanel:
    """Turn cumulative (date, fips, cases, deaths) records into daily increments.

    Rows for areas outside ``area_ids`` are ignored (NYT files cover every
    county). Missing dates carry the last cumulative value forward, i.e. a zero
    increment. Negative increments are clamped to 0 and counted.
    """
    df = raw_rows.loc[:, ["date", "fips", "cases", "deaths"]].copy()
    df = df[df["fips"].notna()]
    df["fips"] = normalize_fips(df["fips"])
    df["date"] = pd.to_datetime(df["date"]).dt.normalize()
    ids = [str(a) for a in area_ids]
    df = df[df["fips"].isin(ids)]
    missing = sorted(set(ids) - set(df["fips"]))
    if missing:
        raise UnknownAreaId(f"no case records for areas: {', '.join(missing)}")
    if df.duplicated(["fips", "date"]).any():
        raise NonMonotoneDates("duplicate (date, area) case records")
    if df.empty:
        raise EmptyDateRange("no case records")

    if date_range is None:
        start, end = df["date"].min(), df["date"].max()
    else:
        start, end = (pd.Timestamp(d) for d in date_range)
        if start > df["date"].max() or end < df["date"].min():
            raise EmptyDateRange(f"date range {start.date()}..{end.date()} holds no case records")
    grid = _daily_grid(start.date(), end.date())
    # one extra leading day so the first increment subtracts any earlier cumulative
    full = pd.DatetimeIndex(np.concatenate([[grid[0] - np.timedelta64(1, "D")], grid]))

    cases = np.zeros((len(ids), len(grid)), dtype=np.int64)
    deaths = np.zeros_like(cases)
    n_clamped = 0
    for k, a in enumerate(ids):
        sub = df[df["fips"] == a].sort_values("date").set_index("date")
        cum = sub[["cases", "deaths"]].reindex(sub.index.union(full)).sort_index()
        cum = cum.ffill().fillna(0).loc[full]
        inc = np.diff(cum.to_numpy(dtype=float), axis=0)
        neg = inc < 0
        n_clamped += int(neg.sum())
        inc[neg] = 0
        cases[k] = np.rint(inc[:, 0]).astype(np.int64)
        deaths[k] = np.rint(inc[:, 1]).astype(np.int64)
    if n_clamped:
        log.warning("clamped %d negative daily increments to zero", n_clamped)
    pop = None if population is None else np.asarray(population, dtype=float)
    return CaseSeriesPanel(tuple(ids), grid, cases, deaths, pop, n_clamped)


def read_cases_csv(path, area_ids: Sequence[str], date_range=None, population=None) -> CaseSeriesPanel:
    """Read an NYT-shaped ``date,county,state,fips,cases,deaths`` file."""
    try:
        raw = pd.read_csv(path, dtype={"fips": str})
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    need = {"date", "fips", "cases", "deaths"}
    if not need <= set(raw.columns):
        raise DataError(f"{path}: missing columns {sorted(need - set(raw.columns))}")
    return ingest_cases(raw, area_ids, date_range, population)


def read_population_csv(path, area_ids: Sequence[str]) -> np.ndarray:
    df = pd.read_csv(path, dtype={"fips": str})
    if not {"fips", "population"} <= set(df.columns):
        raise DataError(f"{path}: needs columns fips,population")
    df["fips"] = normalize_fips(df["fips"])
    pop = df.set_index("fips")["population"]
    missing = [a for a in area_ids if a not in pop.index]
    if missing:
        raise UnknownAreaId(f"{path}: no population for {', '.join(missing)}")
    out = pop.loc[list(area_ids)].to_numpy(dtype=float)
    if (out <= 0).any():
        raise DataError(f"{path}: populations must be positive")
    return out


def read_predictors_csv(path, area_ids: Sequence[str], standardize: bool = True) -> PredictorTable:
    df = pd.read_csv(path, dtype={"fips": str})
    need = {"fips", *PREDICTOR_COLUMNS}
    if not need <= set(df.columns):
        raise DataError(f"{path}: missing columns {sorted(need - set(df.columns))}")
    df["fips"] = normalize_fips(df["fips"])
    df = df.set_index("fips")
    missing = [a for a in area_ids if a not in df.index]
    if missing:
        raise UnknownAreaId(f"{path}: no predictors for {', '.join(missing)}")
    raw = df.loc[list(area_ids), list(PREDICTOR_COLUMNS)].to_numpy(dtype=float)
    return PredictorTable(tuple(area_ids), PREDICTOR_COLUMNS, raw, standardized=standardize)


def three_day_average(panel: CaseSeriesPanel) -> SmoothedPanel:
    """Trailing 3-day mean; the window shrinks to 1 and 2 days at the series start."""
    if panel.n_days < 3:
        raise TooShortSeries("3-day average needs at least 3 days")
    y = panel.cases.astype(float)
    csum = np.cumsum(y, axis=1)
    out = csum.copy()
    out[:, 3:] = csum[:, 3:] - csum[:, :-3]
    width = np.minimum(np.arange(1, panel.n_days + 1), 3)
    return SmoothedPanel(panel.area_ids, panel.dates, out / width)


def susceptible_trajectory(panel: CaseSeriesPanel, lam: float) -> SusceptibleTrajectory:
    """Accounting equation S_j = max(0, S_{j-1} - (1 + lam) * y_{j-1} - d_{j-1})."""
    if lam < 0:
        raise NegativeLambda(f"asymptomatic multiplier must be >= 0, got {lam}")
    if panel.population is None:
        raise DataError("panel has no population; call with_population first")
    return SusceptibleTrajectory(
        accounting_susceptibles(panel.population, panel.cases, panel.deaths, lam), float(lam)
    )


def accounting_susceptibles(population, cases, deaths, lam: float) -> np.ndarray:
    removed = (1.0 + lam) * np.asarray(cases, dtype=float) + np.asarray(deaths, dtype=float)
    S = np.empty_like(removed)
    S[:, 0] = population
    for j in range(1, S.shape[1]):
        S[:, j] = np.maximum(0.0, S[:, j - 1] - removed[:, j - 1])
    return S


def asymptomatic_lambda(rate_percent: float) -> float:
    """Multiplier lam = r / (1 - r) for an asymptomatic share of ``rate_percent`` %."""
    if not 0 <= rate_percent < 100:
        raise RateOutOfRange(f"asymptomatic rate must lie in [0, 100), got {rate_percent}")
    r = rate_percent / 100.0
    return r / (1.0 - r)


def changepoint_index(period_lengths: Sequence[int], J_m: int) -> np.ndarray:
    """Period (1-based) of every day 1..J_m for consecutive segments of the given lengths."""
    lengths = [int(x) for x in period_lengths]
    if not lengths or min(lengths) < 1:
        raise LengthMismatch("period lengths must all be >= 1")
    if sum(lengths) != J_m:
        raise LengthMismatch(f"period lengths sum to {sum(lengths)}, expected {J_m}")
    return np.repeat(np.arange(1, len(lengths) + 1), lengths)


def read_mobility_csv(path, area_ids: Sequence[str], dates: np.ndarray,
                      period_lengths: Sequence[int]) -> MobilityPanel:
    """Read ``date,fips,work_index`` onto the given day grid.

    Missing cells carry the area's last observation forward; leading gaps are 0.
    """
    df = pd.read_csv(path, dtype={"fips": str})
    if not {"date", "fips", "work_index"} <= set(df.columns):
        raise DataError(f"{path}: needs columns date,fips,work_index")
    df["fips"] = normalize_fips(df["fips"])
    df["date"] = pd.to_datetime(df["date"]).dt.normalize()
    df = df[df["fips"].isin(list(area_ids))]
    if df.duplicated(["fips", "date"]).any():
        raise NonMonotoneDates(f"{path}: duplicate (date, area) mobility records")
    wide = df.pivot(index="date", columns="fips", values="work_index")
    wide = wide.reindex(index=pd.DatetimeIndex(dates), columns=list(area_ids))
    work = wide.ffill().fillna(0.0).to_numpy(dtype=float).T
    dates = np.asarray(dates, dtype="datetime64[D]")
    idx = changepoint_index(period_lengths, len(dates))
    return MobilityPanel(tuple(area_ids), dates, work, tuple(int(x) for x in period_lengths), idx)
