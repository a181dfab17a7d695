"""Bayesian spatio-temporal SIR count models for areal epidemic panels."""

__version__ = "0.1.0"

from .data import CaseSeriesPanel, asymptomatic_lambda, changepoint_index, ingest_cases, three_day_average
from .diagnostics import FitReport, fit_report, geweke, posterior_summary, waic
from .graph import AdjacencyGraph, build_graph, lattice_graph, load_state_graph
from .inference import PriorConfig, SamplerControls, mcmc_run
from .models import CATALOG, ParameterState, build_model_data, catalog, log_mean
from .simulate import SimScenario, simulate_panel

__all__ = [
    "AdjacencyGraph", "CATALOG", "CaseSeriesPanel", "FitReport", "ParameterState", "PriorConfig",
    "SamplerControls", "SimScenario", "asymptomatic_lambda", "build_graph", "build_model_data", "catalog",
    "changepoint_index", "fit_report", "geweke", "ingest_cases", "lattice_graph", "load_state_graph",
    "log_mean", "mcmc_run", "posterior_summary", "simulate_panel", "three_day_average", "waic",
]
