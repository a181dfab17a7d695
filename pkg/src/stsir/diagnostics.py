"""WAIC, mean deviance, Geweke z-scores, GVS inclusion and posterior summaries."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ChainTooShort, DegenerateChain, TooFewDraws

INCLUSION_THRESHOLD = 0.5


class WAIC(NamedTuple):
    waic: float
    lppd: float
    p_waic: float


class Geweke(NamedTuple):
    z: float
    degenerate: bool = False


class Summary(NamedTuple):
    mean: float
    sd: float
    q025: float
    q975: float


def waic(pointwise_loglik) -> WAIC:
    """WAIC from a (draws x cells) log-likelihood matrix, using the variance form of p_waic."""
    ll = np.asarray(pointwise_loglik, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 2:
        raise TooFewDraws("WAIC needs at least 2 draws")
    if ll.shape[1] < 1:
        raise ValueError("WAIC needs at least one cell")
    S = ll.shape[0]
    lppd = float(np.sum(logsumexp(ll, axis=0) - math.log(S)))
    p_waic = float(np.sum(np.var(ll, axis=0, ddof=1)))
    return WAIC(-2.0 * (lppd - p_waic), lppd, p_waic)


def mean_deviance(pointwise_loglik) -> float:
    """Posterior mean of -2 x total log-likelihood."""
    ll = np.asarray(pointwise_loglik, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 1:
        raise TooFewDraws("mean deviance needs at least one draw")
    return float(np.mean(-2.0 * ll.sum(axis=1)))


def _batch_means_spectrum(x: np.ndarray) -> float:
    """Spectral density at frequency zero via floor(sqrt(n)) non-overlapping batch means."""
    n = len(x)
    k = max(int(math.isqrt(n)), 2)
    m = n // k
    means = x[: k * m].reshape(k, m).mean(axis=1)
    return m * float(np.var(means, ddof=1))


def geweke(chain: Sequence[float], frac_a: float = 0.1, frac_b: float = 0.5) -> Geweke:
    """Compare the mean of the first ``frac_a`` with the last ``frac_b`` of a chain."""
    x = np.asarray(chain, dtype=float)
    n = len(x)
    if n < 100:
        raise ChainTooShort(f"Geweke needs at least 100 draws, got {n}")
    a = x[: int(frac_a * n)]
    b = x[n - int(frac_b * n):]
    s_a, s_b = _batch_means_spectrum(a), _batch_means_spectrum(b)
    denom = s_a / len(a) + s_b / len(b)
    if not denom > 0:
        warnings.warn("constant chain; Geweke z set to 0", DegenerateChain, stacklevel=2)
        return Geweke(0.0, True)
    return Geweke(float((a.mean() - b.mean()) / math.sqrt(denom)), False)


def inclusion_probability(draws) -> tuple[float, bool]:
    """Posterior mean of a 0/1 indicator and whether it reaches the 0.5 inclusion threshold (ties included)."""
    g = np.asarray(draws, dtype=float)
    if g.size == 0:
        raise TooFewDraws("no indicator draws")
    if not np.isin(g, (0.0, 1.0)).all():
        raise ValueError("indicator draws must be 0 or 1")
    p = float(g.mean())
    return p, p >= INCLUSION_THRESHOLD


def posterior_summary(draws) -> Summary:
    x = np.asarray(draws, dtype=float).ravel()
    if x.size < 2:
        raise TooFewDraws("summary needs at least 2 draws")
    q = np.quantile(x, [0.025, 0.975], method="linear")
    return Summary(float(x.mean()), float(x.std(ddof=1)), float(q[0]), float(q[1]))


# ---------------------------------------------------------------------------
# reports


@dataclass
class FitReport:
    preset: str
    waic: float
    lppd: float
    p_waic: float
    mean_deviance: float
    n_draws: int
    n_cells: int
    data_digest: str
    geweke_z: dict[str, list[float]] = field(default_factory=dict)
    inclusion_probs: dict[str, float] = field(default_factory=dict)
    summaries: dict[str, dict[str, float]] = field(default_factory=dict)
    acceptance_rates: list[dict[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        return cls(**d)


def _is_monitored(name: str) -> bool:
    return (name.startswith(("alpha", "theta", "eta_")) or name in ("tau_v", "tau_u", "tau_y"))


def beta_draws(chain, k: int) -> np.ndarray:
    """beta_k = gamma_k * theta_k (theta_k without GVS)."""
    th = chain.column(f"theta{k}")
    if f"gamma{k}" in chain.names:
        return th * chain.column(f"gamma{k}")
    return th


def summary_rows(chains) -> list[str]:
    """Scalar parameters shown in the summary table, with theta renamed to beta."""
    names = chains[0].names
    rows = [n for n in names if n.startswith("alpha")]
    rows += [f"beta{n[5:]}" for n in names if n.startswith("theta")]
    rows += [n for n in names if n in ("tau_v", "tau_u", "tau_y")]
    rows += [n for n in names if n.startswith("eta_")]
    return rows


def pooled(chains, name: str) -> np.ndarray:
    if name.startswith("beta"):
        return np.concatenate([beta_draws(c, int(name[4:])) for c in chains])
    return np.concatenate([c.column(name) for c in chains])


def fit_report(chains) -> FitReport:
    """Pool chains into a :class:`FitReport`."""
    ll = np.vstack([c.pointwise_loglik for c in chains])
    w = waic(ll)
    geweke_z = {}
    for name in chains[0].names:
        if not _is_monitored(name):
            continue
        zs = []
        for c in chains:
            col = c.column(name)
            if len(col) >= 100:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", DegenerateChain)
                    zs.append(geweke(col).z)
        if zs:
            geweke_z[name] = zs
    incl = {}
    for name in chains[0].names:
        if name.startswith("gamma"):
            incl[f"beta{name[5:]}"] = inclusion_probability(pooled(chains, name))[0]
    summaries = {name: posterior_summary(pooled(chains, name))._asdict() for name in summary_rows(chains)}
    return FitReport(
        preset=chains[0].preset, waic=w.waic, lppd=w.lppd, p_waic=w.p_waic, mean_deviance=mean_deviance(ll),
        n_draws=ll.shape[0], n_cells=ll.shape[1], data_digest=chains[0].data_digest, geweke_z=geweke_z,
        inclusion_probs=incl, summaries=summaries, acceptance_rates=[c.acceptance_rates for c in chains],
    )


def _fmt(x: float) -> str:
    if x == 0 or 1e-3 <= abs(x) < 1e6:
        return f"{x:.4f}"
    return f"{x:.4e}"


def format_summary_table(report: FitReport) -> str:
    """Parameter table: posterior mean, sd, 2.5 and 97.5 percentiles."""
    lines = [f"Model {report.preset}: posterior estimates",
             f"{'Parameter':<12}{'Mean':>14}{'SD':>14}{'2.5%':>14}{'97.5%':>14}"]
    for name, s in report.summaries.items():
        lines.append(f"{name:<12}{_fmt(s['mean']):>14}{_fmt(s['sd']):>14}{_fmt(s['q025']):>14}{_fmt(s['q975']):>14}")
    if report.inclusion_probs:
        lines.append("")
        lines.append(f"{'Predictor':<12}{'P(incl)':>14}  decision")
        for name, p in report.inclusion_probs.items():
            lines.append(f"{name:<12}{p:>14.3f}  {'in' if p >= INCLUSION_THRESHOLD else 'out'}")
    lines.append("")
    lines.append(f"Mean deviance {report.mean_deviance:.1f}   WAIC {report.waic:.1f}   "
                 f"(lppd {report.lppd:.1f}, p_waic {report.p_waic:.1f}; {report.n_draws} draws x {report.n_cells} cells)")
    return "\n".join(lines)


def compare_table(reports: Sequence[tuple[str, FitReport]]) -> list[tuple[str, float, float]]:
    """(label, mean deviance, WAIC) rows sorted by WAIC; ties keep input order."""
    rows = [(label, r.mean_deviance, r.waic) for label, r in reports]
    return sorted(rows, key=lambda r: r[2])
