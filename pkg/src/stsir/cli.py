"""``stsir`` command line: fit, simulate, compare, profiles, models list.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_json, load_run_data, resolve_path
from .data import PREDICTOR_COLUMNS, MobilityPanel, PredictorTable, asymptomatic_lambda, changepoint_index
from .diagnostics import FitReport, compare_table, fit_report, format_summary_table
from .errors import ConfigError, DataError, MixedDataDigests, StsirError, UnknownAreaId
from .graph import lattice_graph, read_adjacency_csv
from .inference import mcmc_run
from .models import ParameterState, catalog, catalog_table, linear_predictor, unflatten_state
from .outputs import (
    atomic_write_text,
    dumps_json,
    read_draws_csv,
    sha256_file,
    write_chain,
    write_loglik,
)
from .simulate import (
    SimScenario,
    simulate_panel,
    write_adjacency_csv,
    write_cases_csv,
    write_mobility_csv,
    write_population_csv,
    write_predictors_csv,
)

log = logging.getLogger("stsir")

MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# fit


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "preset", None):
        cfg.preset = args.preset
    if getattr(args, "seed", None) is not None:
        cfg.sampler["seed"] = args.seed
    if getattr(args, "out", None):
        cfg.out = str(Path(args.out).resolve())
    return cfg


def run_fit(cfg: RunConfig, out_dir: Path | None = None, quiet: bool = False) -> Path:
    """Validate, fit and write a complete run directory. Returns its path."""
    cfg.validate()
    controls = cfg.controls()
    prior = cfg.prior_config()
    model = cfg.model()
    out = Path(out_dir or cfg.out or f"run-{model.name}-seed{controls.seed}").resolve()
    loaded = load_run_data(cfg)
    data = loaded.data
    chains = mcmc_run(model, data, prior, controls)
    report = fit_report(chains)

    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for ch in chains:
        outputs.append(write_chain(ch, out).name)
    write_loglik(chains, data.area_ids, data.dates, out)
    outputs += ["loglik.npy", "loglik_cells.csv"]
    atomic_write_text(out / "report.json", dumps_json(report.to_dict()))
    table = format_summary_table(report)
    atomic_write_text(out / "report.txt", table + "\n")
    outputs += ["report.json", "report.txt"]

    config_dict = cfg.to_dict(include_out=False)
    config_dict["preset"] = model.name
    config_dict["sampler"] = {k: getattr(controls, k) for k in
                              ("n_iter", "burn_in", "thin", "seed", "n_chains", "n_jobs", "pilot_iter")}
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "package_version": __version__,
        "preset": model.name,
        "seed": controls.seed,
        "controls": asdict(controls),
        "config": config_dict,
        "data_digest": data.digest(),
        "n_cells": data.n_cells,
        "lambda": loaded.lam,
        "input_sha256": {k: sha256_file(p) for k, p in cfg.input_files().items()},
        "pseudo_prior": chains[0].pseudo_prior,
        "outputs": sorted(outputs),
    }
    atomic_write_text(out / "manifest.json", dumps_json(manifest))
    if not quiet:
        print(table)
        print(f"\nrun written to {out}")
    return out


def cmd_fit(args) -> int:
    if not args.config:
        raise ConfigError("fit needs --config")
    cfg = _apply_overrides(RunConfig.load(args.config), args)
    run_fit(cfg)
    return 0


# ---------------------------------------------------------------------------
# run directories


def load_report(run_dir) -> FitReport:
    path = Path(run_dir) / "report.json"
    if not path.is_file():
        raise ConfigError(f"{run_dir} is not a completed run (no report.json)")
    return FitReport.from_dict(load_json(path))


def load_manifest(run_dir) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.is_file():
        raise ConfigError(f"{run_dir} is not a completed run (no manifest.json)")
    return load_json(path)


def load_chains(run_dir) -> list[tuple[list[str], np.ndarray]]:
    paths = sorted(Path(run_dir).glob("chain_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise ConfigError(f"{run_dir} holds no chain CSVs")
    return [read_draws_csv(p) for p in paths]


# ---------------------------------------------------------------------------
# compare


def compare_runs(paths, out: Path | None = None) -> list[tuple[str, float, float]]:
    """Comparison rows (label, mean deviance, WAIC) sorted by WAIC.

    Each path is a run directory, or a config file that is fitted first into
    ``out/<config stem>``.
    """
    if len(paths) < 2:
        raise ConfigError("compare needs at least two runs")
    run_dirs = []
    for p in paths:
        p = Path(p)
        if p.is_file():
            if out is None:
                raise ConfigError("fitting configs inside compare needs --out")
            run_dirs.append(run_fit(RunConfig.load(p), out / p.stem, quiet=True))
        else:
            run_dirs.append(p)
    reports = [(d, load_report(d)) for d in run_dirs]
    digests = {r.data_digest for _, r in reports}
    if len(digests) > 1:
        detail = ", ".join(f"{d}={r.data_digest}" for d, r in reports)
        raise MixedDataDigests(f"runs were fitted to different data: {detail}")
    labels = [r.preset for _, r in reports]
    if len(set(labels)) < len(labels):
        labels = [f"{r.preset} ({Path(d).name})" for d, r in reports]
    return compare_table([(lab, r) for lab, (_, r) in zip(labels, reports)])


def format_compare(rows) -> str:
    lines = [f"{'Model':<24}{'Mean deviance':>16}{'WAIC':>16}"]
    lines += [f"{lab:<24}{dev:>16.2f}{w:>16.2f}" for lab, dev, w in rows]
    return "\n".join(lines)


def cmd_compare(args) -> int:
    out = Path(args.out).resolve() if args.out else None
    rows = compare_runs(args.runs, out)
    text = format_compare(rows)
    print(text)
    if out is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "mean_deviance", "waic"])
        w.writerows([lab, repr(dev), repr(wa)] for lab, dev, wa in rows)
        atomic_write_text(out / "compare.csv", buf.getvalue())
        atomic_write_text(out / "compare.txt", text + "\n")
    return 0


# ---------------------------------------------------------------------------
# profiles


def posterior_mean_profiles(run_dir) -> tuple[object, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell posterior mean and 95% interval of mu over all retained draws.

    Returns ``(loaded_data, observed_daily, mean, q025, q975)``; the mu arrays
    are (n_areas, J) with NaN on day 0 and on cells outside the likelihood.
    """
    manifest = load_manifest(run_dir)
    cfg = RunConfig.from_dict(manifest["config"], Path(run_dir).resolve())
    loaded = load_run_data(cfg)
    data, preset = loaded.data, loaded.model
    if data.digest() != manifest["data_digest"]:
        raise MixedDataDigests(f"input files changed since {run_dir} was fitted")
    draws = np.vstack([d for _, d in load_chains(run_dir)])
    mus = np.empty((draws.shape[0],) + data.mask.shape)
    for k, row in enumerate(draws):
        eta = linear_predictor(preset.spec, unflatten_state(preset, data, row), data)
        mus[k] = np.exp(eta)
    mus[:, ~data.mask] = np.nan
    n = data.n_areas
    pad = np.full((n, 1), np.nan)
    mean = np.hstack([pad, mus.mean(axis=0)])
    q = np.quantile(mus, [0.025, 0.975], axis=0, method="linear")
    q025, q975 = np.hstack([pad, q[0]]), np.hstack([pad, q[1]])
    pos = np.searchsorted(loaded.panel.dates, data.dates)
    observed = loaded.panel.cases[:, pos]
    return loaded, observed, mean, q025, q975


def _cell(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def write_profiles(run_dir, area_ids=None, out: Path | None = None) -> list[Path]:
    loaded, observed, mean, q025, q975 = posterior_mean_profiles(run_dir)
    data = loaded.data
    ids = list(data.area_ids) if not area_ids else [str(a) for a in area_ids]
    for a in ids:
        if a not in data.area_ids:
            raise UnknownAreaId(f"unknown area id {a!r}")
    out = Path(out or Path(run_dir) / "profiles")
    smooth = data.kind == "lognormal_3d"
    written = []
    for a in ids:
        i = data.graph.index(a)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["date", "observed"] + (["observed_3d"] if smooth else []) + ["mu_mean", "mu_q025", "mu_q975"])
        for j, d in enumerate(data.dates):
            extra = [repr(float(data.observed[i, j]))] if smooth else []
            w.writerow([str(d), int(observed[i, j]), *extra, _cell(mean[i, j]), _cell(q025[i, j]), _cell(q975[i, j])])
        path = out / f"profile_{a}.csv"
        atomic_write_text(path, buf.getvalue())
        written.append(path)
    return written


def cmd_profiles(args) -> int:
    paths = write_profiles(args.run, args.areas, Path(args.out) if args.out else None)
    print(f"wrote {len(paths)} profile file(s) to {paths[0].parent}")
    return 0


# ---------------------------------------------------------------------------
# simulate

_SCENARIO_KEYS = {
    "preset", "adjacency", "lattice", "n_days", "start_date", "population", "seed_infections",
    "asymptomatic_rate", "death_rate", "death_lag", "true_state", "predictors", "mobility", "seed", "out",
}


def _vector(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"{name} must be a number or a list of {n} values")
    return arr


def _true_state(raw: dict) -> ParameterState:
    raw = dict(raw)
    alpha = np.zeros(3)
    a = np.asarray(raw.pop("alpha", [0.0]), dtype=float)
    if a.size > 3:
        raise ConfigError("true_state.alpha has at most three entries")
    alpha[: a.size] = a
    kw = {}
    for k in ("theta", "gamma", "v", "u", "eta"):
        if raw.get(k) is not None:
            kw[k] = np.asarray(raw.pop(k), dtype=float)
        raw.pop(k, None)
    for k in ("tau_v", "tau_u", "tau_y"):
        if raw.get(k) is not None:
            val = raw.pop(k)
            kw[k] = float(val) if np.ndim(val) == 0 else np.asarray(val, dtype=float)
        raw.pop(k, None)
    if raw:
        raise ConfigError(f"unknown true_state keys: {', '.join(sorted(raw))}")
    return ParameterState(alpha=alpha, **kw)


def generate_predictors(area_ids, rng: np.random.Generator) -> PredictorTable:
    """Plausible county-level deprivation values for synthetic scenarios."""
    n = len(area_ids)
    raw = np.column_stack([
        np.clip(rng.normal(15.0, 4.0, n), 2.0, 40.0),
        np.clip(rng.normal(25.0, 12.0, n), 1.0, 80.0),
        rng.normal(0.0, 1.0, n),
    ])
    return PredictorTable(tuple(area_ids), PREDICTOR_COLUMNS, raw)


def generate_work_index(n: int, period_lengths, rng: np.random.Generator) -> np.ndarray:
    """Work-place mobility (% change from baseline) with a level per period, area offsets and daily noise."""
    levels = rng.uniform(-50.0, -5.0, len(period_lengths))
    day_level = np.repeat(levels, period_lengths)
    work = day_level[None, :] + rng.normal(0.0, 5.0, (n, 1)) + rng.normal(0.0, 3.0, (n, len(day_level)))
    return np.round(work)


def run_simulate(scenario_path, seed: int | None = None, out: Path | None = None,
                 preset: str | None = None) -> Path:
    """Simulate a panel from a scenario JSON and write ingestible CSVs plus a ready-to-run fit config."""
    scenario_path = Path(scenario_path)
    raw = load_json(scenario_path)
    base = scenario_path.resolve().parent
    unknown = sorted(set(raw) - _SCENARIO_KEYS)
    if unknown:
        raise ConfigError(f"unknown scenario keys: {', '.join(unknown)}")
    model = catalog(preset or raw.get("preset", "2A"))
    seed = int(raw.get("seed", 0) if seed is None else seed)
    out = Path(out or resolve_path(raw.get("out"), base) or f"sim-{model.name}-seed{seed}").resolve()
    if "n_days" not in raw or "true_state" not in raw:
        raise ConfigError("scenario needs n_days and true_state")
    n_days = int(raw["n_days"])

    if raw.get("lattice") is not None:
        rows, cols = (int(x) for x in raw["lattice"])
        graph = lattice_graph(rows, cols)
    elif raw.get("adjacency") is not None:
        path = resolve_path(raw["adjacency"], base)
        if not Path(path).is_file():
            raise ConfigError(f"adjacency file not found: {path}")
        graph = read_adjacency_csv(path)
    else:
        raise ConfigError("scenario needs 'lattice' [rows, cols] or an 'adjacency' file")
    n = graph.n_areas

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pop_raw = raw.get("population", 100000)
    if isinstance(pop_raw, dict):
        lo, hi = float(pop_raw["min"]), float(pop_raw["max"])
        population = np.round(np.exp(rng.uniform(np.log(lo), np.log(hi), n)))
    else:
        population = _vector(pop_raw, n, "population")

    # predictors and mobility are also written when the preset ignores them,
    # so one synthetic panel can be fitted with every preset
    predictors = None
    if model.spec.uses_predictors or raw.get("predictors") is not None:
        if raw.get("predictors", "generate") != "generate":
            raise ConfigError("scenario predictors must be \"generate\"")
        predictors = generate_predictors(graph.area_ids, rng)

    work = lengths = None
    if model.spec.mobility or raw.get("mobility") is not None:
        mob = raw.get("mobility") or {}
        lengths = [int(x) for x in mob.get("changepoints", [])]
        offset = int(mob.get("start_offset", 0))
        tail = n_days - offset - sum(lengths)
        if not lengths or min(lengths) < 1 or offset < 0 or tail < 0:
            raise ConfigError(f"mobility window (start_offset + changepoints) must fit in n_days ({n_days})")
        if model.spec.mobility and (offset or tail):
            raise ConfigError(f"preset {model.name}: mobility.changepoints must sum to n_days ({n_days})")
        # days outside the window continue the first and last period levels
        padded = [lengths[0] + offset, *lengths[1:-1], lengths[-1] + tail] if len(lengths) > 1 \
            else [n_days]
        work = generate_work_index(n, padded, rng)

    try:
        scenario = SimScenario(
            graph=graph, n_days=n_days, population=population, true_state=_true_state(raw["true_state"]),
            model=model, seed_infections=_vector(raw.get("seed_infections", 10), n, "seed_infections"),
            lam=asymptomatic_lambda(float(raw.get("asymptomatic_rate", 20.0))),
            death_rate=float(raw.get("death_rate", 0.0)), death_lag=int(raw.get("death_lag", 14)),
            predictors=predictors, work=work, period_lengths=tuple(padded) if work is not None else None,
            start_date=str(raw.get("start_date", "2020-03-06")),
        )
    except DataError as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None
    result = simulate_panel(scenario, rng)

    out.mkdir(parents=True, exist_ok=True)
    write_cases_csv(result.panel, out / "cases.csv")
    write_population_csv(graph.area_ids, population, out / "population.csv")
    write_adjacency_csv(graph, out / "adjacency.csv")
    fit_cfg = {"cases": "cases.csv", "population": "population.csv", "adjacency": "adjacency.csv",
               "preset": model.name, "asymptomatic_rate": float(raw.get("asymptomatic_rate", 20.0))}
    if predictors is not None:
        write_predictors_csv(predictors, out / "predictors.csv")
        fit_cfg["predictors"] = "predictors.csv"
    if work is not None:
        idx = changepoint_index(padded, n_days)
        write_mobility_csv(MobilityPanel(graph.area_ids, result.panel.dates, work, tuple(padded), idx),
                           out / "mobility.csv")
        fit_cfg["mobility"] = "mobility.csv"
        fit_cfg["changepoints"] = lengths
        if offset:
            fit_cfg["mobility_start"] = str(result.panel.dates[offset])
    st = result.state
    truth = {"preset": model.name, "seed": seed, "lambda": scenario.lam,
             **{k: getattr(st, k) for k in ("alpha", "theta", "gamma", "v", "u", "tau_v", "tau_u", "tau_y", "eta")
                if getattr(st, k) is not None}}
    if predictors is not None:
        truth["beta"] = st.beta()
    atomic_write_text(out / "truth.json", dumps_json(truth))
    atomic_write_text(out / "fit_config.json", dumps_json(fit_cfg))
    return out


def cmd_simulate(args) -> int:
    if not args.config:
        raise ConfigError("simulate needs --config (a scenario file)")
    out = run_simulate(args.config, args.seed, Path(args.out) if args.out else None, args.preset)
    print(f"simulated panel written to {out}")
    return 0


# ---------------------------------------------------------------------------
# models


def cmd_models(args) -> int:
    if args.action == "list":
        print(catalog_table())
    else:
        p = catalog(args.action)
        print(json.dumps({"name": p.name, "description": p.description, "terms": p.spec.terms(),
                          "data_model": p.data_model.kind,
                          "per_day_obs_precision": p.data_model.tv_obs_precision}, indent=2))
    return 0


# ---------------------------------------------------------------------------


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stsir", description="Spatio-temporal SIR count models fitted by MCMC.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a preset to a case panel")
    f.add_argument("--config", help="run config JSON, or a manifest.json from an earlier run")
    f.add_argument("--seed", type=_u64)
    f.add_argument("--out", help="run directory")
    f.add_argument("--preset")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="simulate a synthetic panel from a scenario file")
    s.add_argument("--config", help="scenario JSON")
    s.add_argument("--seed", type=_u64)
    s.add_argument("--out")
    s.add_argument("--preset")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="rank runs on the same data by WAIC")
    c.add_argument("runs", nargs="+", help="run directories or run configs")
    c.add_argument("--out", help="directory for compare.csv / compare.txt")
    c.set_defaults(func=cmd_compare)

    p = sub.add_parser("profiles", help="per-area observed counts and posterior mean expected counts")
    p.add_argument("run", help="run directory")
    p.add_argument("--areas", nargs="*", help="area ids (default: all)")
    p.add_argument("--out", help="output directory (default: <run>/profiles)")
    p.set_defaults(func=cmd_profiles)

    m = sub.add_parser("models", help="list the model catalog")
    m.add_argument("action", nargs="?", default="list", help="'list' or a preset name")
    m.set_defaults(func=cmd_models)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StsirError as exc:
        kind = {2: "config error", 3: "data error"}.get(exc.exit_code, "runtime error")
        print(f"stsir: {kind}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
