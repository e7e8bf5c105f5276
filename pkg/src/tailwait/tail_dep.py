"""Tail-dependence index from fitted waiting-time mixtures.

gamma compares the law of the observed pair wait with the law it would have
under independence, ``|kappa_i - kappa_i'|`` for independent marginal waits.
Distances are either the kernel embedding distance (Gaussian kernel
``exp(-(a - b)^2)``) or the Kolmogorov-Smirnov statistic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import gauss_kernel_sum
from ._rng import rng_for
from .errors import ConfigError, DataError
from .mixture import GibbsDraws, predictive_batch
from .sim import Panel

METRICS = ("rkhs", "ks")
# exp(-6.5^2) ~ 4.5e-19, far below double precision relative to the diagonal
_CUTOFF = 6.5


def _grouped(x) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size == 0:
        raise DataError("metric needs nonempty samples")
    if not np.all(np.isfinite(arr)):
        raise DataError("metric samples must be finite")
    vals, counts = np.unique(arr, return_counts=True)
    return vals, counts / arr.size


def mmd(sample_a, sample_b, scale: float = 1.0) -> float:
    """V-statistic estimate of the kernel embedding distance.

    ``sqrt(mean k(a, a') + mean k(b, b') - 2 mean k(a, b))`` with
    ``k(s, t) = exp(-(scale * (s - t))^2)``, clamped at zero before the root.
    Tied values are merged into weights so atoms cost O(1).
    """
    if not scale > 0:
        raise ConfigError("scale must be positive")
    a, wa = _grouped(np.asarray(sample_a, dtype=float) * scale)
    b, wb = _grouped(np.asarray(sample_b, dtype=float) * scale)
    kaa = gauss_kernel_sum(a, wa, a, wa, _CUTOFF)
    kbb = gauss_kernel_sum(b, wb, b, wb, _CUTOFF)
    kab = gauss_kernel_sum(a, wa, b, wb, _CUTOFF)
    return math.sqrt(max(kaa + kbb - 2.0 * kab, 0.0))


def ks_distance(sample_a, sample_b) -> float:
    """Sup over pooled points of the difference between the two empirical CDFs."""
    a = np.sort(np.asarray(sample_a, dtype=float).ravel())
    b = np.sort(np.asarray(sample_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise DataError("metric needs nonempty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def distance(sample_a, sample_b, metric: str = "rkhs", scale: float = 1.0) -> float:
    if metric == "rkhs":
        return mmd(sample_a, sample_b, scale)
    if metric == "ks":
        return ks_distance(sample_a, sample_b)
    raise ConfigError(f"unknown metric {metric!r}; expected one of {METRICS}")


@dataclass
class GammaPosterior:
    pair: tuple[int, int]
    levels: tuple[float, float]
    metric: str
    samples: np.ndarray
    point_estimate: float
    p_d: float | None = None
    d_star: np.ndarray | None = field(default=None, repr=False)
    noise_floor: float | None = None

    def __post_init__(self):
        if np.any(self.samples < 0):
            raise ValueError("gamma draws must be nonnegative")
        if self.p_d is not None and not 0.0 <= self.p_d <= 1.0:
            raise ValueError("p_d must lie in [0, 1]")

    @property
    def flags_dependence(self) -> bool:
        """Decision rule: p_d above 0.95."""
        return self.p_d is not None and self.p_d > 0.95


def _align(*chains: GibbsDraws) -> list[GibbsDraws]:
    n = min(len(c) for c in chains)
    return [c.truncate(n) for c in chains]


def gamma_posterior(draws_i: GibbsDraws, draws_j: GibbsDraws, draws_pair: GibbsDraws, M: int = 500,
                    metric: str = "rkhs", seed: int = 0, scale: float = 1.0,
                    pair: tuple[int, int] = (0, 1), levels: tuple[float, float] = (math.nan, math.nan)) -> GammaPosterior:
    """Posterior draws of gamma, one per aligned triple of retained draws.

    Also estimates the finite-M noise floor: for each triple the two M-samples
    are pooled, randomly split in half and compared again.
    """
    if M < 2:
        raise ConfigError("M must be at least 2")
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if min(len(draws_i), len(draws_j), len(draws_pair)) == 0:
        raise DataError("empty chain")
    di, dj, dp = _align(draws_i, draws_j, draws_pair)
    rng = rng_for(seed, "gamma", metric)
    ki = predictive_batch(di.weights, di.rates, M, rng)
    kj = predictive_batch(dj.weights, dj.rates, M, rng)
    kd = predictive_batch(dp.weights, dp.rates, M, rng)
    null = np.abs(ki - kj)
    R = len(dp)
    gam = np.empty(R)
    floor = np.empty(R)
    for r in range(R):
        gam[r] = distance(null[r], kd[r], metric, scale)
        pooled = rng.permutation(np.concatenate([null[r], kd[r]]))
        floor[r] = distance(pooled[:M], pooled[M:], metric, scale)
    return GammaPosterior(tuple(pair), tuple(levels), metric, gam, float(gam.mean()), noise_floor=float(floor.mean()))


def d_star_and_pd(draws_pair: GibbsDraws, gamma: GammaPosterior, M: int = 500, seed: int = 0,
                  scale: float = 1.0) -> GammaPosterior:
    """Reference distances between predictive samples of two independent pair-chain draws, and p_d.

    ``p_d`` is the fraction of couplings ``(gamma_r, d*_{pi(r)})`` with
    ``gamma_r > d*``, ``pi`` a random permutation.
    """
    R = len(draws_pair)
    if R < 2:
        raise DataError("need at least 2 retained pair-chain draws for d*")
    rng = rng_for(seed, "dstar", gamma.metric)
    first = rng.permutation(R)
    # second index uniform over the other draws, so the two are always distinct
    second = (first + rng.integers(1, R, size=R)) % R
    s1 = predictive_batch(draws_pair.weights[first], draws_pair.rates[first], M, rng)
    s2 = predictive_batch(draws_pair.weights[second], draws_pair.rates[second], M, rng)
    d_star = np.array([distance(a, b, gamma.metric, scale) for a, b in zip(s1, s2)])
    return with_p_d(gamma, d_star, rng)


def with_p_d(gamma: GammaPosterior, d_star: np.ndarray, rng: np.random.Generator) -> GammaPosterior:
    d_star = np.asarray(d_star, dtype=float)
    R = gamma.samples.size
    partner = d_star[rng.permutation(d_star.size)]
    if partner.size < R:
        partner = np.resize(partner, R)
    p_d = float(np.mean(gamma.samples > partner[:R]))
    return GammaPosterior(gamma.pair, gamma.levels, gamma.metric, gamma.samples, gamma.point_estimate,
                          p_d, d_star, gamma.noise_floor)


@dataclass(frozen=True)
class ConditionalCorrelation:
    """Results of the conditional correlation baseline.

    ``site_correlation[j]`` is ``corr(w_j, w_ref)`` over the retained times
    (nan at the reference). ``increment_correlation`` is the correlation
    matrix of the increments ``w_j - w_ref`` among the non-reference sites.
    """

    ref_site: int
    threshold: float
    n_retained: int
    site_correlation: np.ndarray
    increment_correlation: np.ndarray
    others: tuple[int, ...]


def conditional_correlation(panel: Panel, ref_site: int, threshold: float, min_exceedances: int = 30) -> ConditionalCorrelation:
    """Correlations among exponential-margin values at times the reference site is extreme."""
    w = panel.values
    n = w.shape[0]
    if not 0 <= ref_site < n:
        raise DataError(f"ref_site {ref_site} out of range for {n} sites")
    keep = w[ref_site] > threshold
    m = int(keep.sum())
    if m < min_exceedances:
        raise DataError(f"reference site has {m} exceedances of {threshold}; need {min_exceedances}")
    sub = w[:, keep]
    ref = sub[ref_site]
    if np.std(ref) == 0:
        raise DataError("reference values are constant over the retained times")
    others = tuple(j for j in range(n) if j != ref_site)
    inc = sub[list(others)] - ref
    # rounding leaves a shifted copy with increments that vary by a few ulps
    tol = 1e-12 * max(1.0, float(np.max(np.abs(sub))))
    flat = [j for j, row in zip(others, inc) if np.std(row) <= tol]
    if flat:
        raise DataError(f"zero-variance increments at sites {flat}: degenerate perfect dependence")
    site_corr = np.full(n, np.nan)
    for j in others:
        if np.std(sub[j]) == 0:
            raise DataError(f"site {j} is constant over the retained times")
        site_corr[j] = np.corrcoef(sub[j], ref)[0, 1]
    inc_corr = np.atleast_2d(np.corrcoef(inc)) if len(others) > 1 else np.ones((1, 1))
    return ConditionalCorrelation(ref_site, float(threshold), m, site_corr, inc_corr, others)
