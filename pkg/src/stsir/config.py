"""Run configuration: JSON loading, up-front validation and data assembly for a fit."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import (
    CaseSeriesPanel,
    MobilityPanel,
    PredictorTable,
    normalize_fips,
    asymptomatic_lambda,
    read_cases_csv,
    read_mobility_csv,
    read_population_csv,
    read_predictors_csv,
)
from .errors import ConfigError, DataError, IncompatibleData, LengthMismatch, StsirError
from .graph import AdjacencyGraph, fixture_path, read_adjacency_csv
from .inference import GammaPrior, PriorConfig, SamplerControls
from .models import ModelData, ModelPreset, build_model_data, catalog

FIXTURE_PREFIX = "fixture:"
_FILE_KEYS = ("cases", "population", "adjacency", "predictors", "mobility")
_SAMPLER_KEYS = {"n_iter", "burn_in", "thin", "seed", "n_chains", "n_jobs", "pilot_iter"}
_PRIOR_KEYS = {"coef_sd", "tau_v", "tau_vj", "tau_u", "tau_y", "inclusion_prob"}


def resolve_path(value: str | None, base: Path) -> str | None:
    """Absolute path for a config entry; ``fixture:<name>`` points into the shipped fixtures."""
    if value is None:
        return None
    value = str(value)
    if value.startswith(FIXTURE_PREFIX):
        return str(fixture_path(value[len(FIXTURE_PREFIX):]))
    p = Path(value)
    return str(p if p.is_absolute() else (base / p).resolve())


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return obj


@dataclass
class RunConfig:
    cases: str
    population: str
    adjacency: str
    preset: str
    predictors: str | None = None
    mobility: str | None = None
    asymptomatic_rate: float = 20.0
    data_model: str | None = None
    changepoints: list[int] | None = None
    mobility_start: str | None = None
    start_date: str | None = None
    end_date: str | None = None
    sampler: dict = field(default_factory=dict)
    prior: dict = field(default_factory=dict)
    out: str | None = None

    @classmethod
    def from_dict(cls, raw: dict, base: Path) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        missing = [k for k in ("cases", "population", "adjacency", "preset") if raw.get(k) is None]
        if missing:
            raise ConfigError(f"config is missing required keys: {', '.join(missing)}")
        kw = dict(raw)
        for k in _FILE_KEYS:
            kw[k] = resolve_path(raw.get(k), base)
        if raw.get("out") is not None:
            kw["out"] = resolve_path(raw["out"], base)
        kw["sampler"] = dict(raw.get("sampler") or {})
        kw["prior"] = dict(raw.get("prior") or {})
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read a config file, or the ``config`` section of a run manifest."""
        path = Path(path)
        raw = load_json(path)
        if "manifest_version" in raw:
            raw = raw["config"]
        return cls.from_dict(raw, path.resolve().parent)

    def to_dict(self, include_out: bool = True) -> dict:
        d = asdict(self)
        if not include_out:
            d.pop("out")
        return d

    # -- validation -------------------------------------------------------

    def model(self) -> ModelPreset:
        return catalog(self.preset)

    def controls(self) -> SamplerControls:
        bad = sorted(set(self.sampler) - _SAMPLER_KEYS)
        if bad:
            raise ConfigError(f"unknown sampler keys: {', '.join(bad)}")
        try:
            return SamplerControls(**{k: int(v) for k, v in self.sampler.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"sampler: {exc}") from None

    def prior_config(self) -> PriorConfig:
        bad = sorted(set(self.prior) - _PRIOR_KEYS)
        if bad:
            raise ConfigError(f"unknown prior keys: {', '.join(bad)}")
        kw = {}
        try:
            for k, v in self.prior.items():
                kw[k] = GammaPrior(*v) if k.startswith("tau") else float(v)
            return PriorConfig(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"prior: {exc}") from None

    def validate(self) -> None:
        """Check everything that can be checked without reading the data files in full."""
        model = self.model()
        spec = model.spec
        if self.data_model is not None and self.data_model != model.data_model.kind:
            raise ConfigError(f"preset {model.name} uses data model {model.data_model.kind!r}, "
                              f"config asks for {self.data_model!r}")
        if spec.uses_predictors and self.predictors is None:
            raise IncompatibleData(f"preset {model.name} needs a 'predictors' file")
        if spec.mobility:
            if self.mobility is None:
                raise IncompatibleData(f"preset {model.name} needs a 'mobility' file")
            if not self.changepoints:
                raise IncompatibleData(f"preset {model.name} needs 'changepoints' (period lengths)")
            if any(int(x) < 1 for x in self.changepoints):
                raise ConfigError("changepoints must all be >= 1")
        if not 0 <= float(self.asymptomatic_rate) < 100:
            raise ConfigError("asymptomatic_rate must lie in [0, 100)")
        for k in _FILE_KEYS:
            p = getattr(self, k)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{k} file not found: {p}")
        self.controls()
        self.prior_config()

    def input_files(self) -> dict[str, str]:
        return {k: getattr(self, k) for k in _FILE_KEYS if getattr(self, k) is not None}


def read_area_ids(path) -> list[str]:
    """Study areas in the order they appear in the population file."""
    df = pd.read_csv(path, dtype={"fips": str})
    if "fips" not in df.columns:
        raise DataError(f"{path}: needs a fips column")
    ids = list(normalize_fips(df["fips"]))
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate fips")
    return ids


@dataclass
class LoadedData:
    graph: AdjacencyGraph
    panel: CaseSeriesPanel
    predictors: PredictorTable | None
    mobility: MobilityPanel | None
    lam: float
    model: ModelPreset
    data: ModelData


def load_run_data(cfg: RunConfig) -> LoadedData:
    """Read every input file and assemble the :class:`ModelData` for the configured preset."""
    model = cfg.model()
    try:
        ids = read_area_ids(cfg.population)
        graph = read_adjacency_csv(cfg.adjacency, ids)
        pop = read_population_csv(cfg.population, ids)
        dr = None
        if cfg.start_date or cfg.end_date:
            if not (cfg.start_date and cfg.end_date):
                raise ConfigError("give both start_date and end_date, or neither")
            dr = (cfg.start_date, cfg.end_date)
        panel = read_cases_csv(cfg.cases, ids, dr, pop)
        preds = read_predictors_csv(cfg.predictors, ids) if model.spec.uses_predictors else None
        mob = None
        if model.spec.mobility:
            start = np.datetime64(cfg.mobility_start or panel.dates[0], "D")
            lengths = [int(x) for x in cfg.changepoints]
            dates = start + np.arange(sum(lengths))
            if dates[0] < panel.dates[0] or dates[-1] > panel.dates[-1]:
                raise LengthMismatch(f"mobility window {dates[0]}..{dates[-1]} is not inside the case panel "
                                     f"{panel.dates[0]}..{panel.dates[-1]}")
            mob = read_mobility_csv(cfg.mobility, ids, dates, lengths)
        lam = asymptomatic_lambda(float(cfg.asymptomatic_rate))
        data = build_model_data(panel, graph, model, lam, preds, mob)
    except StsirError:
        raise
    except (OSError, ValueError, KeyError, pd.errors.ParserError) as exc:
        raise DataError(f"could not read input data: {exc}") from exc
    return LoadedData(graph, panel, preds, mob, lam, model, data)
