"""Adaptive Metropolis-within-Gibbs sampler for the propagator catalog.

Update schedule per sweep:

* adaptive random-walk Metropolis on each scalar coefficient (alpha, theta
  when included, eta), plus a joint random-walk move on the same vector whose
  covariance is learned during burn-in. The joint move also shifts v by the
  area-level part of the proposed change, a fixed linear map, so the
  coefficients are not held back by slowly moving random effects;
* GVS: theta_k from its pseudo-prior when gamma_k = 0, then gamma_k from its
  Bernoulli full conditional;
* random effects: v_i, u_i and v_ij by per-element random-walk Metropolis,
  vectorised over conditionally independent elements (all v; one graph
  colour class of u at a time). Lognormal models draw v_ij exactly;
* an exact Gibbs draw along the likelihood-flat directions that trade
  alpha0 and the area-level theta against v;
* conjugate gamma draws for every precision;
* for models with both u and v, an exact draw of the u/v split per area;
* u re-centred to sum zero, with alpha0 absorbing the mean.

Step sizes adapt toward the target acceptance rate (Robbins-Monro on the log
scale) during burn-in only and are frozen afterwards.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, gammaln

from .errors import (
    AdaptationDiverged,
    DataError,
    IslandArea,
    NonFiniteLikelihoodAtInit,
    NonFiniteLogMean,
    PseudoPriorUnset,
)
from .graph import AdjacencyGraph, icar_pairwise_ss
from .models import (
    ModelData,
    ModelPreset,
    ParameterState,
    flatten_state,
    linear_predictor,
    parameter_names,
    unflatten_state,
    zero_state,
)

log = logging.getLogger(__name__)

_MAX_LOG_STEP = np.log(1e6)


@dataclass(frozen=True)
class GammaPrior:
    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("gamma prior shape and rate must be positive")

    @property
    def mean(self) -> float:
        return self.shape / self.rate


@dataclass
class PriorConfig:
    coef_sd: float = 10.0
    tau_v: GammaPrior = GammaPrior(0.5, 0.0005)
    tau_vj: GammaPrior = GammaPrior(0.5, 0.1)
    tau_u: GammaPrior = GammaPrior(0.5, 0.0005)
    tau_y: GammaPrior = GammaPrior(0.5, 0.0005)
    inclusion_prob: float = 0.5
    # (means, sds) of the Normal pseudo-prior per predictor; None -> pilot run
    pseudo_prior: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if self.coef_sd <= 0:
            raise ValueError("coef_sd must be positive")
        if not 0 < self.inclusion_prob < 1:
            raise ValueError("inclusion_prob must lie in (0, 1)")
        if self.pseudo_prior is not None:
            m, s = (np.asarray(a, dtype=float) for a in self.pseudo_prior)
            if m.shape != s.shape or (s <= 0).any():
                raise ValueError("pseudo-prior needs matching means and positive sds")
            self.pseudo_prior = (m, s)


@dataclass
class SamplerControls:
    n_iter: int = 20000
    burn_in: int = 10000
    thin: int = 10
    seed: int = 0
    n_chains: int = 2
    n_jobs: int = 1
    pilot_iter: int = 2000
    target_accept: float = 0.44

    def __post_init__(self):
        if self.n_iter <= 0 or self.thin <= 0 or self.n_chains <= 0 or self.burn_in < 0:
            raise ValueError("sampler controls must be positive")
        if self.burn_in >= self.n_iter:
            raise ValueError("burn_in must be smaller than n_iter")

    @property
    def n_retained(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin


@dataclass
class ChainOutput:
    preset: str
    names: list[str]
    draws: np.ndarray  # (n_retained, n_params)
    pointwise_loglik: np.ndarray  # (n_retained, n_cells)
    cell_area: np.ndarray
    cell_day: np.ndarray
    acceptance_rates: dict[str, float]
    seed: int
    chain_index: int
    n_iter: int
    burn_in: int
    thin: int
    data_digest: str = ""
    pseudo_prior: tuple[list[float], list[float]] | None = None
    step_sizes: dict[str, float] = field(default_factory=dict)

    @property
    def n_retained(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def state(self, k: int, preset: ModelPreset, data: ModelData) -> ParameterState:
        return unflatten_state(preset, data, self.draws[k])


# ---------------------------------------------------------------------------
# likelihood and conjugate pieces


def _cell_loglik(eta: np.ndarray, data: ModelData, state: ParameterState) -> np.ndarray:
    """Per-cell log-likelihood on the (n, J-1) grid, 0 outside the mask."""
    with np.errstate(over="ignore", invalid="ignore"):
        if data.kind == "poisson_daily":
            cl = np.where(data.mask, data.response * eta - np.exp(eta), 0.0)
        else:
            tau = np.broadcast_to(np.asarray(state.tau_y, dtype=float), (data.n_days - 1,))[None, :]
            d = data.response - eta
            cl = np.where(data.mask, 0.5 * np.log(tau) - 0.5 * tau * d * d, 0.0)
    return cl + data.log_norm


def log_likelihood_pointwise(state: ParameterState, model: ModelPreset, data: ModelData) -> np.ndarray:
    """Log-likelihood of every modelled cell (area-major, days 1..J-1, S > 0 only)."""
    eta = linear_predictor(model.spec, state, data)
    if not np.isfinite(eta[data.mask]).all():
        raise NonFiniteLogMean("log mean is not finite in some cells")
    return _cell_loglik(eta, data, state)[data.mask]


def total_log_likelihood(state: ParameterState, model: ModelPreset, data: ModelData) -> float:
    return float(_cell_loglik(linear_predictor(model.spec, state, data), data, state).sum())


def poisson_logpmf(y, mu):
    y, mu = np.asarray(y, dtype=float), np.asarray(mu, dtype=float)
    return y * np.log(mu) - mu - gammaln(y + 1.0)


def normal_logpdf(x, mean, tau):
    x, mean, tau = (np.asarray(a, dtype=float) for a in (x, mean, tau))
    return 0.5 * np.log(tau / (2 * np.pi)) - 0.5 * tau * (x - mean) ** 2


def gibbs_precision_update(effects, prior: GammaPrior, rng: np.random.Generator) -> float:
    """Draw a precision from Ga(a + n/2, b + sum(effects**2)/2)."""
    e = np.ravel(np.asarray(effects, dtype=float))
    if e.size < 1:
        raise ValueError("need at least one effect")
    return _gamma_draw(prior, e.size, float(e @ e), rng)


def _gamma_draw(prior: GammaPrior, n: float, ss: float, rng: np.random.Generator) -> float:
    return float(rng.gamma(prior.shape + 0.5 * n, 1.0 / (prior.rate + 0.5 * ss)))


def icar_conditional(u, graph: AdjacencyGraph, i: int, tau_u: float) -> tuple[float, float]:
    """Mean and precision of u_i given its neighbours under the ICAR prior."""
    nb = graph.neighbor_lists[i]
    if not nb:
        raise IslandArea(f"area {graph.area_ids[i]} has no neighbours")
    u = np.asarray(u, dtype=float)
    return float(u[list(nb)].mean()), float(tau_u * len(nb))


def metropolis_accept(log_ratio, log_u) -> np.ndarray:
    """Accept iff log U < log posterior ratio (non-finite ratios reject)."""
    log_ratio = np.asarray(log_ratio, dtype=float)
    return np.isfinite(log_ratio) & (np.asarray(log_u) < log_ratio)


def gvs_inclusion_logodds(k: int, state: ParameterState, model: ModelPreset, data: ModelData,
                          prior: PriorConfig) -> float:
    """Log odds of gamma_k = 1 given everything else (theta_k held at its current value)."""
    if prior.pseudo_prior is None:
        raise PseudoPriorUnset("GVS needs a pseudo-prior for every predictor")
    s1, s0 = state.copy(), state.copy()
    s1.gamma[k], s0.gamma[k] = 1, 0
    ll1 = total_log_likelihood(s1, model, data)
    ll0 = total_log_likelihood(s0, model, data)
    return _gvs_logodds(ll1, ll0, state.theta[k], prior, k)


def _gvs_logodds(ll1, ll0, theta, prior: PriorConfig, k: int) -> float:
    m, s = prior.pseudo_prior[0][k], prior.pseudo_prior[1][k]
    sd = prior.coef_sd
    lp_prior = -0.5 * (theta / sd) ** 2 - np.log(sd)
    lp_pseudo = -0.5 * ((theta - m) / s) ** 2 - np.log(s)
    p = prior.inclusion_prob
    return float(ll1 - ll0 + lp_prior - lp_pseudo + np.log(p) - np.log1p(-p))


def gvs_indicator_update(k: int, state: ParameterState, model: ModelPreset, data: ModelData,
                         prior: PriorConfig, rng: np.random.Generator) -> int:
    """Draw gamma_k from its full conditional, then theta_k from the pseudo-prior if excluded.

    Mutates ``state`` and returns the new indicator.
    """
    if model.spec.predictor_mode != "gvs":
        raise ValueError("preset does not use GVS")
    p1 = expit(gvs_inclusion_logodds(k, state, model, data, prior))
    g = int(rng.random() < p1)
    state.gamma[k] = g
    if g == 0:
        state.theta[k] = rng.normal(prior.pseudo_prior[0][k], prior.pseudo_prior[1][k])
    return g


# ---------------------------------------------------------------------------
# chain


class _Adapt:
    """Per-element log step sizes with Robbins-Monro adaptation toward a target rate."""

    def __init__(self, shape, init: float, target: float):
        self.log_s = np.full(shape, np.log(init))
        self.target = target
        self.acc = np.zeros(shape)
        self.tries = 0

    @property
    def s(self):
        return np.exp(self.log_s)

    def update(self, acc_prob, accepted, t: int, adapting: bool, name: str):
        if adapting:
            self.log_s += (np.minimum(acc_prob, 1.0) - self.target) * (t + 1.0) ** -0.6
            if not np.isfinite(self.log_s).all() or (self.log_s > _MAX_LOG_STEP).any():
                raise AdaptationDiverged(f"step size for {name} diverged")
        else:
            self.acc += accepted
            self.tries += 1

    def rate(self) -> float:
        return float(np.mean(self.acc) / self.tries) if self.tries else float("nan")


class _Chain:
    def __init__(self, preset: ModelPreset, data: ModelData, prior: PriorConfig, controls: SamplerControls,
                 rng: np.random.Generator):
        self.preset, self.spec, self.dm = preset, preset.spec, preset.data_model
        self.data, self.prior, self.c, self.rng = data, prior, controls, rng
        spec, dm = self.spec, self.dm
        if spec.predictor_mode == "gvs" and prior.pseudo_prior is None:
            raise PseudoPriorUnset("GVS needs a pseudo-prior; run a pilot or set PriorConfig.pseudo_prior")
        self.mask = data.mask
        self.maskf = data.mask.astype(float)
        self.y = np.where(data.mask, data.response, 0.0)
        self.const_rows = data.log_norm.sum(axis=1)
        self.n, self.C = data.n_areas, data.n_days - 1
        self.ncol_cells = self.maskf.sum(axis=0)

        # scalar coefficients: (name, kind, index, covariate)
        self.coefs = [("alpha0", "alpha", 0, np.ones((1, 1)))]
        if spec.include_self_lag:
            self.coefs.append(("alpha1", "alpha", 1, data.self_lag))
        if spec.include_neighbor_lag:
            self.coefs.append(("alpha2", "alpha", 2, data.nb_lag))
        if spec.uses_predictors:
            for k in range(data.X.shape[1]):
                self.coefs.append((f"theta{k + 1}", "theta", k, data.X[:, k][:, None]))
        if spec.mobility:
            for p in range(data.n_periods):
                self.coefs.append((f"eta_{p + 1}", "eta", p, data.work * (data.period == p)[None, :]))
        self.coef_adapt = {name: _Adapt((), 0.05, controls.target_accept) for name, *_ in self.coefs}

        self.state = self._initial_state()
        self.eta = linear_predictor(spec, self.state, data)
        self.ll = self._total(self.eta)
        if not np.isfinite(self.ll):
            raise NonFiniteLikelihoodAtInit("log-likelihood is not finite at the initial state")

        self.joint_on = len(self.coefs) > 1
        d = len(self.coefs)
        self.joint_mean = np.zeros(d)
        self.joint_m2 = np.zeros((d, d))
        self.joint_n = 0
        self.joint_chol = None
        self.joint_adapt = _Adapt((), 2.38 / np.sqrt(d), 0.234)

        # Area-level part of each coefficient's covariate, weighted by the observed
        # counts. Joint moves shift v by minus this amount so v does not lag behind.
        self.comp = None
        if spec.uh_mode != "none":
            wts = self.maskf * (np.where(data.mask, data.response, 0.0) + 1.0)
            tot = np.maximum(wts.sum(axis=1), 1e-300)
            self.comp = np.array([(wts * np.broadcast_to(cov, wts.shape)).sum(axis=1) / tot
                                  for *_, cov in self.coefs])
        if spec.uh_mode == "spatial":
            self.v_adapt = _Adapt(self.n, 0.1, controls.target_accept)
        elif spec.spacetime and dm.kind == "poisson_daily":
            self.v_adapt = _Adapt((self.n, self.C), 0.1, controls.target_accept)
        if spec.icar:
            self.u_adapt = _Adapt(self.n, 0.1, controls.target_accept)
            self.nbr_W = data.graph.adjacency_matrix
            self.n_nb = data.graph.n_neighbors.astype(float)
            self.icar_rank = self.n - data.graph.n_components

    # -- likelihood helpers -------------------------------------------------
    def _cells(self, eta, rows=None):
        y = self.y if rows is None else self.y[rows]
        m = self.maskf if rows is None else self.maskf[rows]
        with np.errstate(over="ignore", invalid="ignore"):
            if self.dm.kind == "poisson_daily":
                return y * eta - m * np.exp(eta)
            tau = np.broadcast_to(np.asarray(self.state.tau_y, dtype=float), (self.C,))[None, :]
            r = self.data.response if rows is None else self.data.response[rows]
            d = r - eta
            return m * (0.5 * np.log(tau) - 0.5 * tau * d * d)

    def _rows(self, eta, rows=None):
        const = self.const_rows if rows is None else self.const_rows[rows]
        out = self._cells(eta, rows).sum(axis=1) + const
        return np.where(np.isnan(out), -np.inf, out)

    def _total(self, eta) -> float:
        return float(self._rows(eta).sum())

    def _lp_coef(self, b):
        return -0.5 * (b / self.prior.coef_sd) ** 2

    # -- initialisation -----------------------------------------------------
    def _initial_state(self) -> ParameterState:
        data, spec, prior = self.data, self.spec, self.prior
        st = zero_state(spec, data, self.dm)
        m = data.mask
        if m.any():
            if data.kind == "poisson_daily":
                S_cells = np.exp(data.logS[m])
                rate = max(data.response[m].mean(), 0.5) / S_cells.mean()
                st.alpha[0] = np.log(rate)
            else:
                st.alpha[0] = float((data.response[m] - data.logS[m]).mean())
        C = self.C
        if spec.uh_mode in ("spatial", "spacetime"):
            st.tau_v = prior.tau_v.mean
        elif spec.uh_mode == "spacetime_tvprec":
            st.tau_v = np.full(C, prior.tau_vj.mean)
        if spec.icar:
            st.tau_u = prior.tau_u.mean
        if self.dm.kind == "lognormal_3d":
            st.tau_y = np.full(C, prior.tau_y.mean) if self.dm.tv_obs_precision else prior.tau_y.mean
        if spec.predictor_mode == "gvs":
            st.theta = np.array(prior.pseudo_prior[0], dtype=float).copy()
            st.gamma = np.ones(len(st.theta), dtype=np.int64)
        return st

    # -- coefficient blocks -------------------------------------------------
    def _coef_value(self, kind, idx):
        return {"alpha": self.state.alpha, "theta": self.state.theta, "eta": self.state.eta}[kind][idx]

    def _set_coef(self, kind, idx, val):
        {"alpha": self.state.alpha, "theta": self.state.theta, "eta": self.state.eta}[kind][idx] = val

    def _coef_active(self, kind, idx) -> bool:
        return not (kind == "theta" and self.state.gamma is not None and self.state.gamma[idx] == 0)

    def _update_coefs(self, t, adapting):
        for name, kind, idx, cov in self.coefs:
            if not self._coef_active(kind, idx):
                continue
            ad = self.coef_adapt[name]
            b = self._coef_value(kind, idx)
            prop = b + ad.s * self.rng.standard_normal()
            eta_p = self.eta + (prop - b) * cov
            ll_p = self._total(eta_p)
            logr = ll_p - self.ll + self._lp_coef(prop) - self._lp_coef(b)
            acc = bool(metropolis_accept(logr, np.log(self.rng.random())))
            if acc:
                self._set_coef(kind, idx, prop)
                self.eta = eta_p
                self.ll = ll_p
            ad.update(np.exp(min(logr, 0.0)) if np.isfinite(logr) else 0.0, acc, t, adapting, name)

    def _coef_vector(self):
        return np.array([self._coef_value(k, i) for _, k, i, _ in self.coefs])

    def _update_joint(self, t, adapting):
        c = self.c
        x = self._coef_vector()
        if adapting and t >= c.burn_in // 4:
            self.joint_n += 1
            delta = x - self.joint_mean
            self.joint_mean += delta / self.joint_n
            self.joint_m2 += np.outer(delta, x - self.joint_mean)
            d = len(x)
            if self.joint_n >= max(100, 10 * d):
                cov = self.joint_m2 / (self.joint_n - 1) + 1e-12 * np.eye(d)
                try:
                    self.joint_chol = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    self.joint_chol = None
        if self.joint_chol is None:
            return
        active = np.array([self._coef_active(k, i) for _, k, i, _ in self.coefs])
        step = self.joint_adapt.s * (self.joint_chol @ self.rng.standard_normal(len(x)))
        step = np.where(active, step, 0.0)
        prop = x + step
        eta_p = self.eta.copy()
        for (_, _, _, cov), dlt in zip(self.coefs, step):
            if dlt != 0.0:
                eta_p = eta_p + dlt * cov
        logr = float(np.sum(self._lp_coef(prop) - self._lp_coef(x)))
        if self.comp is not None:
            shift = step @ self.comp
            v_p = self.state.v - (shift if self.state.v.ndim == 1 else shift[:, None])
            dv = v_p - self.state.v
            eta_p = eta_p + (dv if dv.ndim == 2 else dv[:, None])
            logr += self._lp_v(v_p) - self._lp_v(self.state.v)
        ll_p = self._total(eta_p)
        logr += ll_p - self.ll
        acc = bool(metropolis_accept(logr, np.log(self.rng.random())))
        if acc:
            for (_, kind, idx, _), val in zip(self.coefs, prop):
                self._set_coef(kind, idx, val)
            if self.comp is not None:
                self.state.v = v_p
            self.eta = eta_p
            self.ll = ll_p
        self.joint_adapt.update(np.exp(min(logr, 0.0)) if np.isfinite(logr) else 0.0, acc, t, adapting, "joint")

    def _lp_v(self, v) -> float:
        if v.ndim == 1:
            return -0.5 * float(self.state.tau_v) * float(v @ v)
        return -0.5 * float((self._tau_v_cols() * v * v).sum())

    def _update_gvs(self):
        st, prior, X = self.state, self.prior, self.data.X
        means, sds = prior.pseudo_prior
        for k in range(len(st.theta)):
            if st.gamma[k] == 0:
                st.theta[k] = self.rng.normal(means[k], sds[k])
            xk = st.theta[k] * X[:, k][:, None]
            if st.gamma[k] == 1:
                eta1, eta0 = self.eta, self.eta - xk
                ll1, ll0 = self.ll, self._total(self.eta - xk)
            else:
                eta1, eta0 = self.eta + xk, self.eta
                ll1, ll0 = self._total(self.eta + xk), self.ll
            p1 = expit(_gvs_logodds(ll1, ll0, st.theta[k], prior, k))
            g = int(self.rng.random() < p1)
            if g != st.gamma[k]:
                st.gamma[k] = g
                self.eta = np.broadcast_to(eta1 if g else eta0, self.eta.shape).copy()
                self.ll = ll1 if g else ll0
            if g == 0:
                st.theta[k] = self.rng.normal(means[k], sds[k])

    # -- random effects -----------------------------------------------------
    def _update_v_spatial(self, t, adapting):
        st, ad = self.state, self.v_adapt
        v = st.v
        prop = v + ad.s * self.rng.standard_normal(self.n)
        eta_p = self.eta + (prop - v)[:, None]
        rl, rl_p = self._rows(self.eta), self._rows(eta_p)
        logr = rl_p - rl - 0.5 * st.tau_v * (prop ** 2 - v ** 2)
        acc = metropolis_accept(logr, np.log(self.rng.random(self.n)))
        st.v = np.where(acc, prop, v)
        self.eta = np.where(acc[:, None], eta_p, self.eta)
        self.ll = float(np.where(acc, rl_p, rl).sum())
        ad.update(np.exp(np.minimum(np.nan_to_num(logr, nan=-np.inf), 0.0)), acc, t, adapting, "v")

    def _update_level_shift(self):
        """Exact Gibbs draw along the directions the likelihood cannot see.

        alpha0 and every active area-level theta_k move by c while v moves by
        -Z c (Z = [1, X_active]), which leaves the linear predictor unchanged.
        The conditional of c is therefore Gaussian from the priors alone.
        """
        st, sd2 = self.state, self.prior.coef_sd ** 2
        active = [k for k in range(len(st.theta)) if self._coef_active("theta", k)] \
            if self.spec.uses_predictors else []
        cols = [np.ones(self.n)] + [self.data.X[:, k] for k in active]
        coefs = [st.alpha[0]] + [st.theta[k] for k in active]
        Z, b = np.column_stack(cols), np.array(coefs)
        if st.v.ndim == 1:
            w, vsum = float(st.tau_v), st.tau_v * st.v
        else:
            tau = self._tau_v_cols()[0]
            w, vsum = float(tau.sum()), st.v @ tau
        prec = np.eye(len(b)) / sd2 + w * (Z.T @ Z)
        h = -b / sd2 + Z.T @ vsum
        L = np.linalg.cholesky(prec)
        mean = np.linalg.solve(L.T, np.linalg.solve(L, h))
        c = mean + np.linalg.solve(L.T, self.rng.standard_normal(len(b)))
        st.alpha[0] += c[0]
        for k, ck in zip(active, c[1:]):
            st.theta[k] += ck
        shift = Z @ c
        st.v = st.v - (shift if st.v.ndim == 1 else shift[:, None])

    def _tau_v_cols(self):
        return np.broadcast_to(np.asarray(self.state.tau_v, dtype=float), (self.C,))[None, :]

    def _update_v_spacetime(self, t, adapting):
        st = self.state
        tau = self._tau_v_cols()
        if self.dm.kind == "lognormal_3d":
            tau_y = np.broadcast_to(np.asarray(st.tau_y, dtype=float), (self.C,))[None, :] * self.maskf
            rest = self.eta - st.v
            prec = tau + tau_y
            mean = tau_y * (self.data.response - rest) / prec
            st.v = mean + self.rng.standard_normal((self.n, self.C)) / np.sqrt(prec)
            self.eta = rest + st.v
            self.ll = self._total(self.eta)
            return
        ad = self.v_adapt
        v = st.v
        prop = v + ad.s * self.rng.standard_normal(v.shape)
        eta_p = self.eta + (prop - v)
        cl, cl_p = self._cells(self.eta), self._cells(eta_p)
        logr = cl_p - cl - 0.5 * tau * (prop ** 2 - v ** 2)
        acc = metropolis_accept(logr, np.log(self.rng.random(v.shape)))
        st.v = np.where(acc, prop, v)
        self.eta = np.where(acc, eta_p, self.eta)
        self.ll = self._total(self.eta)
        ad.update(np.exp(np.minimum(np.nan_to_num(logr, nan=-np.inf), 0.0)), acc, t, adapting, "v")

    def _update_u(self, t, adapting):
        st, ad = self.state, self.u_adapt
        acc_prob = np.zeros(self.n)
        accepted = np.zeros(self.n, dtype=bool)
        for rows in self.data.graph.color_classes:
            u = st.u
            ubar = (self.nbr_W[rows] @ u) / self.n_nb[rows]
            prec = st.tau_u * self.n_nb[rows]
            cur = u[rows]
            prop = cur + ad.s[rows] * self.rng.standard_normal(len(rows))
            eta_rows = self.eta[rows]
            eta_p = eta_rows + (prop - cur)[:, None]
            rl, rl_p = self._rows(eta_rows, rows), self._rows(eta_p, rows)
            logr = rl_p - rl - 0.5 * prec * ((prop - ubar) ** 2 - (cur - ubar) ** 2)
            acc = metropolis_accept(logr, np.log(self.rng.random(len(rows))))
            u = u.copy()
            u[rows] = np.where(acc, prop, cur)
            st.u = u
            self.eta[rows] = np.where(acc[:, None], eta_p, eta_rows)
            acc_prob[rows] = np.exp(np.minimum(np.nan_to_num(logr, nan=-np.inf), 0.0))
            accepted[rows] = acc
        ad.update(acc_prob, accepted, t, adapting, "u")
        if self.spec.uh_mode != "none":
            self._update_uv_split()
        shift = st.u.mean()
        st.u = st.u - shift
        st.alpha[0] += shift
        self.ll = self._total(self.eta)

    def _update_uv_split(self):
        """Exact draw of how each area's total u_i + v_i is split between the two effects.

        u_i gains c and v_i (every v_ij for space-time effects) loses c, so the
        linear predictor is untouched and c is Gaussian given the two priors.
        """
        st = self.state
        if st.v.ndim == 1:
            w, vs = np.full(self.n, float(st.tau_v)), st.tau_v * st.v
        else:
            tau = self._tau_v_cols()[0]
            w, vs = np.full(self.n, float(tau.sum())), st.v @ tau
        for rows in self.data.graph.color_classes:
            u = st.u
            ubar = (self.nbr_W[rows] @ u) / self.n_nb[rows]
            pu = st.tau_u * self.n_nb[rows]
            prec = w[rows] + pu
            mean = (vs[rows] + pu * (ubar - u[rows])) / prec
            c = mean + self.rng.standard_normal(len(rows)) / np.sqrt(prec)
            u = u.copy()
            u[rows] += c
            st.u = u
            if st.v.ndim == 1:
                st.v = st.v.copy()
                st.v[rows] -= c
                vs[rows] = st.tau_v * st.v[rows]
            else:
                st.v = st.v.copy()
                st.v[rows] -= c[:, None]
                vs[rows] = st.v[rows] @ tau

    # -- precisions ---------------------------------------------------------
    def _update_precisions(self):
        st, prior, rng, spec = self.state, self.prior, self.rng, self.spec
        if spec.uh_mode in ("spatial", "spacetime"):
            st.tau_v = gibbs_precision_update(st.v, prior.tau_v, rng)
        elif spec.uh_mode == "spacetime_tvprec":
            ss = (st.v ** 2).sum(axis=0)
            st.tau_v = rng.gamma(prior.tau_vj.shape + 0.5 * self.n, 1.0 / (prior.tau_vj.rate + 0.5 * ss))
        if spec.icar:
            st.tau_u = _gamma_draw(prior.tau_u, self.icar_rank, icar_pairwise_ss(st.u, self.data.graph), rng)
        if self.dm.kind == "lognormal_3d":
            d2 = self.maskf * (self.data.response - self.eta) ** 2
            if self.dm.tv_obs_precision:
                st.tau_y = rng.gamma(prior.tau_y.shape + 0.5 * self.ncol_cells,
                                     1.0 / (prior.tau_y.rate + 0.5 * d2.sum(axis=0)))
            else:
                st.tau_y = _gamma_draw(prior.tau_y, self.maskf.sum(), float(d2.sum()), rng)
            self.ll = self._total(self.eta)

    # -- driver -------------------------------------------------------------
    def sweep(self, t: int):
        adapting = t < self.c.burn_in
        spec = self.spec
        self._update_coefs(t, adapting)
        if self.joint_on:
            self._update_joint(t, adapting)
        if spec.predictor_mode == "gvs":
            self._update_gvs()
        if spec.uh_mode == "spatial":
            self._update_v_spatial(t, adapting)
        elif spec.spacetime:
            self._update_v_spacetime(t, adapting)
        if spec.uh_mode != "none":
            self._update_level_shift()
        if spec.icar:
            self._update_u(t, adapting)
        self._update_precisions()

    def pointwise(self) -> np.ndarray:
        cl = self._cells(self.eta) + self.data.log_norm
        return cl[self.mask]

    def run(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.c
        n_ret = c.n_retained
        flat0 = flatten_state(self.preset, self.state)
        draws = np.empty((n_ret, flat0.size))
        ll = np.empty((n_ret, self.data.n_cells))
        k = 0
        for t in range(c.n_iter):
            self.sweep(t)
            if t >= c.burn_in and (t - c.burn_in + 1) % c.thin == 0 and k < n_ret:
                # refresh the cached predictor so incremental updates never drift
                self.eta = linear_predictor(self.spec, self.state, self.data)
                self.ll = self._total(self.eta)
                draws[k] = flatten_state(self.preset, self.state)
                ll[k] = self.pointwise()
                k += 1
        return draws, ll

    def acceptance_rates(self) -> dict[str, float]:
        out = {name: ad.rate() for name, ad in self.coef_adapt.items()}
        if self.joint_chol is not None:
            out["joint"] = self.joint_adapt.rate()
        if hasattr(self, "v_adapt"):
            out["v"] = self.v_adapt.rate()
        if hasattr(self, "u_adapt"):
            out["u"] = self.u_adapt.rate()
        # blocks never proposed after burn-in (an always-excluded GVS coefficient) have no rate
        return {k: r for k, r in out.items() if np.isfinite(r)}

    def step_sizes(self) -> dict[str, float]:
        out = {name: float(ad.s) for name, ad in self.coef_adapt.items()}
        if hasattr(self, "v_adapt"):
            out["v_median"] = float(np.median(self.v_adapt.s))
        if hasattr(self, "u_adapt"):
            out["u_median"] = float(np.median(self.u_adapt.s))
        return out


def _run_chain(args) -> ChainOutput:
    preset, data, prior, controls, seed_seq, index = args
    rng = np.random.default_rng(seed_seq)
    chain = _Chain(preset, data, prior, controls, rng)
    draws, ll = chain.run()
    area, day = data.cell_index()
    pseudo = None
    if prior.pseudo_prior is not None:
        pseudo = ([float(x) for x in prior.pseudo_prior[0]], [float(x) for x in prior.pseudo_prior[1]])
    return ChainOutput(
        preset=preset.name, names=parameter_names(preset, data), draws=draws, pointwise_loglik=ll,
        cell_area=area, cell_day=day, acceptance_rates=chain.acceptance_rates(), seed=controls.seed,
        chain_index=index, n_iter=controls.n_iter, burn_in=controls.burn_in, thin=controls.thin,
        data_digest=data.digest(), pseudo_prior=pseudo, step_sizes=chain.step_sizes(),
    )


def pilot_pseudo_prior(preset: ModelPreset, data: ModelData, prior: PriorConfig, n_iter: int,
                       seed_seq) -> tuple[np.ndarray, np.ndarray]:
    """Fit the fixed-predictor version of a GVS preset and return per-predictor (mean, sd) of theta."""
    fixed = replace(preset, name=preset.name + "-pilot", spec=replace(preset.spec, predictor_mode="fixed"))
    ctl = SamplerControls(n_iter=n_iter, burn_in=n_iter // 2, thin=1, n_chains=1)
    out = _run_chain((fixed, data, replace(prior, pseudo_prior=None), ctl, seed_seq, 0))
    P = len(data.predictor_names)
    th = np.column_stack([out.column(f"theta{k + 1}") for k in range(P)])
    return th.mean(axis=0), np.maximum(th.std(axis=0, ddof=1), 1e-6)


def mcmc_run(model: ModelPreset, data: ModelData, prior: PriorConfig | None = None,
             controls: SamplerControls | None = None) -> list[ChainOutput]:
    """Run ``controls.n_chains`` independent chains with RNG streams spawned from ``controls.seed``."""
    prior = PriorConfig() if prior is None else prior
    controls = SamplerControls() if controls is None else controls
    if model.spec.uses_predictors and data.X is None:
        raise DataError(f"preset {model.name} needs predictors in the model data")
    streams = np.random.SeedSequence(controls.seed).spawn(controls.n_chains + 1)
    if model.spec.predictor_mode == "gvs" and prior.pseudo_prior is None:
        pseudo = pilot_pseudo_prior(model, data, prior, controls.pilot_iter, streams[-1])
        prior = replace(prior, pseudo_prior=pseudo)
    jobs = [(model, data, prior, controls, streams[k], k) for k in range(controls.n_chains)]
    if controls.n_jobs > 1 and controls.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(controls.n_jobs, controls.n_chains)) as pool:
            return list(pool.map(_run_chain, jobs))
    return [_run_chain(j) for j in jobs]
