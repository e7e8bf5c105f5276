"""Bayesian atom-plus-exponentials mixture for censored waiting times.

Model::

    kappa ~ eta_0 * delta_0 + sum_{j=1}^{K-1} eta_j * Exponential(lambda_j)
    eta ~ Dirichlet(alpha, ..., alpha),   lambda_j ~ Gamma(a, b)  (rate b)

Observations are interval censored: an observed value ``k`` means the true
waiting time lies in ``[k, k + dt]``, and only an observed zero may come from
the atom. The sampler alternates the four conjugate Gibbs steps and imputes
the uncensored values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels as _k
from ._rng import rng_for
from .errors import ConfigError, DataError, NumericalError
from .exceedance import WaitingTimes


@dataclass(frozen=True)
class MixturePriors:
    K: int = 11
    dirichlet_alpha: float | None = None
    gamma_a: float = 1.0
    gamma_b: float = 1.0

    def __post_init__(self):
        if self.K < 2:
            raise ConfigError("K must be at least 2 (atom plus one exponential)")
        if self.dirichlet_alpha is None:
            object.__setattr__(self, "dirichlet_alpha", 1.0 / self.K)
        if min(self.dirichlet_alpha, self.gamma_a, self.gamma_b) <= 0:
            raise ConfigError("prior hyperparameters must be positive")


@dataclass(frozen=True)
class MixtureParams:
    """Weights (atom first) and exponential rates."""

    weights: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        r = np.asarray(self.rates, dtype=float)
        if w.size != r.size + 1:
            raise ValueError("need one more weight than rates")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must lie on the simplex")
        if np.any(r <= 0):
            raise ValueError("rates must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "rates", r)

    @property
    def K(self) -> int:
        return self.weights.size

    def mean(self) -> float:
        return float(np.sum(self.weights[1:] / self.rates))

    def survival(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.sum(self.weights[1:, None] * np.exp(-np.outer(self.rates, t.ravel())), axis=0).reshape(t.shape)


@dataclass
class GibbsState:
    weights: np.ndarray
    rates: np.ndarray
    imputed: np.ndarray
    labels: np.ndarray


@dataclass
class GibbsDraws:
    """Retained draws of one chain, stored as arrays (draw-major)."""

    weights: np.ndarray
    rates: np.ndarray
    iterations: np.ndarray
    imputed: np.ndarray | None = None
    censoring_interval: float = 1.0
    trace: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.weights.shape[0] == 0:
            raise ValueError("a chain must retain at least one draw")

    def __len__(self) -> int:
        return self.weights.shape[0]

    def __getitem__(self, r) -> MixtureParams:
        return MixtureParams(self.weights[r], self.rates[r])

    @property
    def K(self) -> int:
        return self.weights.shape[1]

    def truncate(self, n: int) -> "GibbsDraws":
        return GibbsDraws(
            self.weights[:n], self.rates[:n], self.iterations[:n],
            None if self.imputed is None else self.imputed[:n], self.censoring_interval, dict(self.trace),
        )

    def sorted_by_weight(self) -> tuple[np.ndarray, np.ndarray]:
        """Per draw, exponential components ordered by decreasing weight."""
        order = np.argsort(-self.weights[:, 1:], axis=1, kind="stable")
        w = np.take_along_axis(self.weights[:, 1:], order, axis=1)
        r = np.take_along_axis(self.rates, order, axis=1)
        return w, r


def _unique_index(observed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inverse = np.unique(observed, return_inverse=True)
    return uniq.astype(float), inverse.astype(np.int64).ravel()


def allocate(rng: np.random.Generator, imputed, weights, rates) -> np.ndarray:
    """Step 1: component labels given imputed values.

    An imputed value of exactly zero can only come from the atom; a positive
    one picks exponential ``j`` with probability proportional to
    ``eta_j lambda_j exp(-lambda_j x)``.
    """
    labels = np.zeros(np.size(imputed), dtype=np.int64)
    _k.gibbs_allocate(rng, np.asarray(imputed, dtype=float), np.asarray(weights, dtype=float),
                      np.asarray(rates, dtype=float), labels)
    return labels


def update_rates(rng: np.random.Generator, imputed, labels, priors: MixturePriors) -> np.ndarray:
    """Step 2: lambda_j | rest ~ Gamma(a + n_j, rate b + sum of assigned values)."""
    out = np.empty(priors.K - 1)
    _k.gibbs_rates(rng, np.asarray(imputed, dtype=float), np.asarray(labels, dtype=np.int64),
                   priors.K, priors.gamma_a, priors.gamma_b, out)
    return out


def update_weights(rng: np.random.Generator, labels, priors: MixturePriors) -> np.ndarray:
    """Step 3: eta | labels ~ Dirichlet(alpha + counts)."""
    out = np.empty(priors.K)
    _k.gibbs_weights(rng, np.asarray(labels, dtype=np.int64), priors.K, priors.dirichlet_alpha, out)
    return out


def impute(rng: np.random.Generator, observed, width: float, weights, rates) -> tuple[np.ndarray, np.ndarray]:
    """Step 4: component then uncensored value for each censored observation.

    Component ``j`` has weight ``eta_j (F_j(k + dt) - F_j(k))``; the atom has
    weight ``eta_0`` and is only available when ``k == 0``.
    """
    uniq, inverse = _unique_index(np.asarray(observed, dtype=float))
    values = np.empty(inverse.size)
    comp = np.empty(inverse.size, dtype=np.int64)
    _k.gibbs_impute(rng, uniq, inverse, float(width), np.asarray(weights, dtype=float),
                    np.asarray(rates, dtype=float), values, comp)
    return values, comp


def gibbs_update(rng: np.random.Generator, state: GibbsState, data: WaitingTimes, priors: MixturePriors) -> GibbsState:
    """One sweep of the four steps in order."""
    if data.count == 0:
        raise DataError("no waiting times to fit")
    labels = allocate(rng, state.imputed, state.weights, state.rates)
    rates = update_rates(rng, state.imputed, labels, priors)
    weights = update_weights(rng, labels, priors)
    imputed, _ = impute(rng, data.values, data.censoring_interval, weights, rates)
    return GibbsState(weights, rates, imputed, labels)


def initial_state(data: WaitingTimes, priors: MixturePriors) -> GibbsState:
    K = priors.K
    obs = data.values
    positive = obs[obs > 0]
    base = 1.0 / positive.mean() if positive.size else 1.0 / data.censoring_interval
    rates = np.arange(1, K) / K * base
    imputed = np.where(obs > 0, obs + data.censoring_interval / 2.0, 0.0)
    return GibbsState(np.full(K, 1.0 / K), rates, imputed, np.zeros(obs.size, dtype=np.int64))


def run_chain(data: WaitingTimes, priors: MixturePriors | None = None, n_iter: int = 10_000,
              burn_in: int = 2_000, thin: int = 4, seed: int = 0, keep_imputed: bool = False) -> GibbsDraws:
    """Run one chain and keep every ``thin``-th draw after ``burn_in``.

    Equivalent to repeated :func:`gibbs_update` calls, but compiled end to end.
    """
    priors = priors or MixturePriors()
    if data.count == 0:
        raise DataError("no waiting times to fit")
    if not (n_iter > burn_in >= 0) or thin < 1:
        raise ConfigError("need n_iter > burn_in >= 0 and thin >= 1")
    rng = rng_for(seed, "gibbs")
    state = initial_state(data, priors)
    uniq, inverse = _unique_index(data.values)
    n_keep = len(range(burn_in, n_iter, thin))
    W = np.empty((n_keep, priors.K))
    R = np.empty((n_keep, priors.K - 1))
    imp = np.empty((n_keep if keep_imputed else 0, data.count))
    atom_trace = np.empty(n_iter)
    _k.gibbs_run(rng, uniq, inverse, float(data.censoring_interval), state.weights, state.rates,
                 state.imputed, float(priors.dirichlet_alpha), float(priors.gamma_a), float(priors.gamma_b),
                 n_iter, burn_in, thin, W, R, keep_imputed, imp, atom_trace)
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(R))):
        raise NumericalError("non-finite values in the Gibbs chain")
    trace = {
        "atom_weight_mean": float(atom_trace[burn_in:].mean()),
        "atom_weight_sd": float(atom_trace[burn_in:].std()),
        "n_obs": int(data.count),
    }
    return GibbsDraws(W, R, np.arange(burn_in, n_iter, thin), imp if keep_imputed else None,
                      data.censoring_interval, trace)


def identify(draws: GibbsDraws, n_groups: int, atom_rate: float | None = None,
             min_weight: float = 1e-3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Label-switching fix for summarising a chain against a known number of components.

    Per draw:

    * exponentials with ``rate >= atom_rate`` put most of their mass in the
      first censoring interval and are hard to tell apart from the atom, so
      their weight is added to the atom (default ``atom_rate = log(4) / dt``,
      i.e. at least three quarters of the mass below ``dt``);
    * the remaining components are ordered by log rate and split into
      ``n_groups`` contiguous groups minimising the weighted within-group
      variance of log rate (exact dynamic programme); a group's weight is the
      sum of its weights and its rate matches the group mean
      (weighted harmonic mean of the rates);
    * groups are ordered by decreasing weight.

    Components lighter than ``min_weight`` are ignored. Returns the atom weight
    ``(n_draws,)`` and group weights and rates ``(n_draws, n_groups)``; a group
    left empty has weight 0 and rate nan.
    """
    if atom_rate is None:
        atom_rate = math.log(4.0) / draws.censoring_interval
    n = len(draws)
    atom = draws.weights[:, 0].copy()
    gw = np.zeros((n, n_groups))
    gr = np.full((n, n_groups), np.nan)
    for r in range(n):
        w = draws.weights[r, 1:]
        lam = draws.rates[r]
        fast = lam >= atom_rate
        atom[r] += w[fast].sum()
        live = (w >= min_weight) & ~fast
        if not live.any():
            continue
        order = np.argsort(lam[live])
        w_s, lam_s = w[live][order], lam[live][order]
        groups = _contiguous_groups(np.log(lam_s), w_s, min(n_groups, w_s.size))
        ws = np.array([w_s[g].sum() for g in groups])
        rs = np.array([w_s[g].sum() / np.sum(w_s[g] / lam_s[g]) for g in groups])
        o = np.argsort(-ws, kind="stable")
        gw[r, :o.size] = ws[o]
        gr[r, :o.size] = rs[o]
    return atom, gw, gr


def _contiguous_groups(x: np.ndarray, w: np.ndarray, G: int) -> list[slice]:
    m = x.size
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cx = np.concatenate([[0.0], np.cumsum(w * x)])
    cxx = np.concatenate([[0.0], np.cumsum(w * x * x)])

    def cost(i, j):  # slice [i, j)
        sw = cw[j] - cw[i]
        if sw <= 0:
            return 0.0
        sx = cx[j] - cx[i]
        return (cxx[j] - cxx[i]) - sx * sx / sw

    best = np.full((G + 1, m + 1), np.inf)
    back = np.zeros((G + 1, m + 1), dtype=int)
    best[0, 0] = 0.0
    for g in range(1, G + 1):
        for j in range(g, m + 1):
            for i in range(g - 1, j):
                c = best[g - 1, i] + cost(i, j)
                if c < best[g, j]:
                    best[g, j] = c
                    back[g, j] = i
    cuts = [m]
    for g in range(G, 0, -1):
        cuts.append(back[g, cuts[-1]])
    cuts = cuts[::-1]
    return [slice(cuts[k], cuts[k + 1]) for k in range(G)]


def predictive_sample(params: MixtureParams, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` i.i.d. draws from the mixture."""
    if m < 1:
        raise ValueError("m must be >= 1")
    comp = rng.choice(params.K, size=m, p=params.weights / params.weights.sum())
    out = np.zeros(m)
    exp_rows = comp > 0
    out[exp_rows] = rng.exponential(1.0 / params.rates[comp[exp_rows] - 1])
    return out


def predictive_batch(weights: np.ndarray, rates: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """``(n_draws, m)`` predictive samples, one row per parameter draw."""
    n, K = weights.shape
    cdf = np.cumsum(weights, axis=1)
    u = rng.random((n, m)) * cdf[:, -1:]
    comp = np.minimum(np.array([np.searchsorted(c, row, side="right") for c, row in zip(cdf, u)]), K - 1)
    out = np.zeros((n, m))
    exp_rows = comp > 0
    lam = np.take_along_axis(rates, np.maximum(comp - 1, 0), axis=1)
    out[exp_rows] = rng.standard_exponential(exp_rows.sum()) / lam[exp_rows]
    return out


def effective_components(draws: GibbsDraws, floor: float = 0.01) -> dict[int, float]:
    """Posterior distribution of the number of exponential components above ``floor``."""
    counts = (draws.weights[:, 1:] > floor).sum(axis=1)
    values, freq = np.unique(counts, return_counts=True)
    return {int(v): float(f) / counts.size for v, f in zip(values, freq)}


def log_marginal_density(params: MixtureParams, observed: np.ndarray, width: float) -> np.ndarray:
    """Log probability of each censored observation under ``params``."""
    observed = np.asarray(observed, dtype=float)
    with np.errstate(divide="ignore"):
        log_exp = (np.log(params.weights[1:])[None, :] - np.outer(observed, params.rates)
                   + np.log(-np.expm1(-params.rates * width))[None, :])
        log_atom = np.where(observed == 0, np.log(params.weights[0]), -np.inf)
    return logsumexp(np.concatenate([log_atom[:, None], log_exp], axis=1), axis=1)
