"""From panels to waiting-time data.

Exceedance convention throughout: ``w > y`` is an exceedance, ``w <= y`` is
not. A first exceedance (up-crossing) at index ``j`` needs ``j >= 1`` (zero
based), so a series that starts above the level does not count it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .sim import Panel


@dataclass(frozen=True)
class ThresholdSpec:
    """Per-site levels; ``lower_tail`` levels apply to the negated series."""

    levels: np.ndarray
    quantile: float | None = None
    sign: str = "upper"

    def __post_init__(self):
        lv = np.atleast_1d(np.asarray(self.levels, dtype=float))
        if not np.all(np.isfinite(lv)):
            raise DataError("threshold levels must be finite")
        if self.sign not in ("upper", "lower"):
            raise ValueError("sign must be 'upper' or 'lower'")
        object.__setattr__(self, "levels", lv)


@dataclass
class WaitingTimes:
    """Observed (interval-censored) waiting times.

    Each value ``k`` stands for a true waiting time in ``[k, k + censoring_interval]``.
    ``sites`` holds ``(i,)`` for marginal waits or ``(i, i_prime)`` for pairs.
    """

    sites: tuple[int, ...]
    values: np.ndarray
    censoring_interval: float = 1.0
    directions: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < 0):
            raise DataError("waiting times must be nonnegative")
        if not self.censoring_interval > 0:
            raise DataError("censoring_interval must be positive")

    @property
    def count(self) -> int:
        return self.values.size


def empirical_quantile(values, p: float) -> float:
    """Order statistic at position ``ceil(p N)`` (1-based)."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("empirical_quantile of an empty sample")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    k = max(int(math.ceil(p * arr.size)), 1)
    return float(np.partition(arr, k - 1)[k - 1])


def transform_margins(panel: Panel, target: str = "frechet") -> Panel:
    """Rank-transform each site to unit Frechet or standard exponential margins."""
    if target not in ("frechet", "exponential"):
        raise ValueError("target must be 'frechet' or 'exponential'")
    out = np.empty_like(panel.values)
    n = panel.values.shape[1]
    for i, row in enumerate(panel.values):
        if n > 1 and np.all(row == row[0]):
            raise DataError(f"site {i} is constant; ranks are all tied")
        u = rankdata(row, method="average") / (n + 1.0)
        out[i] = -1.0 / np.log(u) if target == "frechet" else -np.log1p(-u)
    return Panel(panel.sites, panel.times, out, panel.sampling_interval)


def preprocess(panel: Panel, mode: str = "identity") -> Panel:
    """``identity`` or per-site negative log returns ``-log(w_t / w_{t-1})``."""
    if mode == "identity":
        return panel
    if mode != "neg_log_return":
        raise ValueError(f"unknown preprocessing mode {mode!r}")
    if np.any(panel.values <= 0):
        i, j = np.argwhere(panel.values <= 0)[0]
        raise DataError(f"nonpositive value at site {i}, time index {j}; log returns need positive prices")
    vals = -np.log(panel.values[:, 1:] / panel.values[:, :-1])
    dt = panel.sampling_interval
    if isinstance(dt, np.ndarray):
        dt = dt[1:]
    return Panel(panel.sites, panel.times[1:], vals, dt)


def up_crossings(series: np.ndarray, y: float) -> np.ndarray:
    """Indices j >= 1 with ``w_j > y`` and ``w_{j-1} <= y``."""
    above = np.asarray(series) > y
    return np.flatnonzero(above[1:] & ~above[:-1]) + 1


def down_crossings(series: np.ndarray, y: float) -> np.ndarray:
    above = np.asarray(series) > y
    return np.flatnonzero(~above[1:] & above[:-1]) + 1


def marginal_waits(series, times, y: float, censoring_interval: float | None = None) -> WaitingTimes:
    """Waiting times between a return below ``y`` and the next first exceedance.

    Each wait is ``(t_f - t_l) - ((t_{l+1} - t_l) + (t_f - t_{f-1}))`` for a
    down-crossing index ``l`` paired with the following up-crossing ``f``,
    floored at zero (the floor only matters on irregular grids and for a
    single-sample dip).
    """
    w = np.asarray(series, dtype=float)
    t = np.asarray(times, dtype=float)
    if w.shape != t.shape:
        raise DataError("series and times must have equal length")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise DataError("times must be strictly increasing")
    dt = censoring_interval if censoring_interval is not None else _grid_step(t)
    F = up_crossings(w, y)
    L = down_crossings(w, y)
    if F.size and L.size and F.min() <= L.min():
        F = F[1:]
    if F.size and L.size and L.max() >= F.max():
        L = L[:-1]
    if F.size == 0 or L.size == 0:
        return WaitingTimes((), np.zeros(0), dt)
    if F.size != L.size:
        raise DataError("crossing bookkeeping failed: unmatched up/down crossings")
    l_next = np.minimum(L + 1, t.size - 1)
    kappa = (t[F] - t[L]) - ((t[l_next] - t[L]) + (t[F] - t[F - 1]))
    return WaitingTimes((), np.maximum(kappa, 0.0), dt)


def first_exceedance_times(series, times, y: float) -> np.ndarray:
    """Times of up-crossings (predecessor at or below ``y``)."""
    t = np.asarray(times, dtype=float)
    return t[up_crossings(np.asarray(series, dtype=float), y)]


def pairwise_waits(series_i, series_j, times_i, times_j, y_i: float, y_j: float,
                   censoring_interval: float | None = None) -> WaitingTimes:
    """For every first exceedance at site i, the distance to the nearest one at site j."""
    Fi = first_exceedance_times(series_i, times_i, y_i)
    Fj = first_exceedance_times(series_j, times_j, y_j)
    if Fj.size == 0:
        raise DataError("the reference site has no first exceedances")
    dt = censoring_interval if censoring_interval is not None else _grid_step(np.asarray(times_i, dtype=float))
    if Fi.size == 0:
        return WaitingTimes((), np.zeros(0), dt)
    pos = np.searchsorted(Fj, Fi)
    left = np.abs(Fi - Fj[np.clip(pos - 1, 0, Fj.size - 1)])
    right = np.abs(Fj[np.clip(pos, 0, Fj.size - 1)] - Fi)
    return WaitingTimes((), np.minimum(left, right), dt)


def _grid_step(t: np.ndarray) -> float:
    if t.size < 2:
        return 1.0
    return float(np.median(np.diff(t)))


def site_levels(panel: Panel, p: float, sign: str = "upper") -> ThresholdSpec:
    """Per-site empirical quantile levels. Lower-tail levels are for ``-w``."""
    vals = panel.values if sign == "upper" else -panel.values
    q = p if sign == "upper" else 1.0 - p
    return ThresholdSpec(np.array([empirical_quantile(row, q) for row in vals]), p, sign)


def first_exceedance_counts(panel: Panel, spec: ThresholdSpec) -> np.ndarray:
    vals = panel.values if spec.sign == "upper" else -panel.values
    return np.array([marginal_waits(row, panel.times, y).count for row, y in zip(vals, spec.levels)])


def select_thresholds(panel: Panel, candidates: Sequence[float], min_count: int = 100,
                      sign: str = "upper") -> ThresholdSpec:
    """Most extreme candidate quantile giving every site ``min_count`` first exceedances.

    ``candidates`` run from most to least extreme. Raises :class:`DataError`
    (listing the per-site counts) when none qualifies.
    """
    report = []
    for p in candidates:
        spec = site_levels(panel, p, sign)
        counts = first_exceedance_counts(panel, spec)
        if np.all(counts >= min_count):
            return spec
        report.append(f"q={p}: counts={counts.tolist()}")
    raise DataError(f"no candidate threshold yields {min_count} first exceedances at every site; " + "; ".join(report))


def pooled_pair_waits(panel: Panel, spec: ThresholdSpec, i: int, j: int) -> WaitingTimes:
    """Both directions (i to j and j to i) of the pairwise waits, pooled."""
    vals = panel.values if spec.sign == "upper" else -panel.values
    dt = _grid_step(panel.times)
    fwd = pairwise_waits(vals[i], vals[j], panel.times, panel.times, spec.levels[i], spec.levels[j], dt)
    bwd = pairwise_waits(vals[j], vals[i], panel.times, panel.times, spec.levels[j], spec.levels[i], dt)
    values = np.concatenate([fwd.values, bwd.values])
    direction = np.concatenate([np.zeros(fwd.count, dtype=int), np.ones(bwd.count, dtype=int)])
    return WaitingTimes((i, j), values, dt, direction)
