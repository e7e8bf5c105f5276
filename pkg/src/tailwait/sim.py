"""Simulation of max-stable velocity processes from their Poisson representation.

A realisation is a finite set of support points ("storms"). Each point has a
magnitude ``u``, a birth location and time, an exponential lifetime and an
attribute (velocity, shape). The field at ``(x, t)`` is the largest
``u * phi_Lambda(x - xi - v (t - sigma))`` over points alive at ``t``.

The magnitude measure ``beta u^-2 du`` is improper, so points are simulated
only for ``u > u_min``: the point rate per unit space-time is ``beta / u_min``
and magnitudes are Pareto(u_min, 1). Levels above :func:`validity_floor` are
reproduced exactly by this truncation.

To avoid edge bias, births are drawn on ``[-S, T]`` with ``S = 20 / delta`` and
a point is kept when its birth location lies within ``r_pad + |v| tau`` of the
observation box, i.e. when it can come close enough to matter during its life.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import _kernels
from ._rng import derive_seed, rng_for
from .attributes import Attribute, AttributeDistribution, batch_quadratic
from .errors import ConfigError, DataError

# relative kernel value beyond which a storm is treated as out of reach
KERNEL_TAIL = 1e-9
REACH_QUANTILE = 0.999


@dataclass(frozen=True)
class MsvConfig:
    """Parameters of one simulation.

    ``birth_window`` is the pre-history length S (``None`` means ``20/delta``);
    ``padding`` is ``"auto"`` for reach-based padding, or ``0``/``None`` to
    simulate births inside the box only.
    """

    beta: float
    delta: float
    u_min: float
    box: tuple[tuple[float, ...], tuple[float, ...]]
    horizon: float
    attributes: AttributeDistribution
    kernel: str = "gaussian"
    seed: int = 0
    birth_window: float | None = None
    padding: str | float | None = "auto"

    def __post_init__(self):
        lo, hi = (np.asarray(b, dtype=float) for b in self.box)
        object.__setattr__(self, "box", (tuple(lo.tolist()), tuple(hi.tolist())))
        for name in ("beta", "delta", "u_min", "horizon"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ConfigError(f"{name} must be positive, got {val!r}")
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(hi <= lo):
            raise ConfigError("box must have positive volume")
        if lo.size != self.attributes.dim:
            raise ConfigError("box dimension differs from attribute dimension")
        if self.kernel != "gaussian":
            raise ConfigError(f"unsupported kernel {self.kernel!r}")
        if self.birth_window is not None and self.birth_window < 0:
            raise ConfigError("birth_window must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.box[0])

    @property
    def box_lo(self) -> np.ndarray:
        return np.asarray(self.box[0])

    @property
    def box_hi(self) -> np.ndarray:
        return np.asarray(self.box[1])

    @property
    def window(self) -> float:
        return 20.0 / self.delta if self.birth_window is None else float(self.birth_window)

    @property
    def point_rate(self) -> float:
        """Expected points per unit volume per unit time."""
        return self.beta / self.u_min


@dataclass(frozen=True)
class SupportPoint:
    magnitude: float
    birth_location: np.ndarray
    birth_time: float
    lifetime: float
    attribute: Attribute


@dataclass
class SupportPoints:
    """Struct-of-arrays collection of support points."""

    magnitude: np.ndarray
    birth_location: np.ndarray
    birth_time: np.ndarray
    lifetime: np.ndarray
    velocity: np.ndarray
    shape: np.ndarray

    def __len__(self) -> int:
        return self.magnitude.size

    def __getitem__(self, k) -> SupportPoint:
        return SupportPoint(
            float(self.magnitude[k]),
            self.birth_location[k].copy(),
            float(self.birth_time[k]),
            float(self.lifetime[k]),
            Attribute(self.velocity[k], self.shape[k]),
        )

    @property
    def dim(self) -> int:
        return self.birth_location.shape[1]

    def subset(self, mask) -> "SupportPoints":
        return SupportPoints(
            self.magnitude[mask],
            self.birth_location[mask],
            self.birth_time[mask],
            self.lifetime[mask],
            self.velocity[mask],
            self.shape[mask],
        )

    @classmethod
    def from_points(cls, points: Sequence[SupportPoint], dim: int | None = None) -> "SupportPoints":
        if not points:
            d = dim or 1
            return cls(np.zeros(0), np.zeros((0, d)), np.zeros(0), np.zeros(0), np.zeros((0, d)), np.zeros((0, d, d)))
        return cls(
            np.array([p.magnitude for p in points], dtype=float),
            np.stack([np.atleast_1d(np.asarray(p.birth_location, float)) for p in points]),
            np.array([p.birth_time for p in points], dtype=float),
            np.array([p.lifetime for p in points], dtype=float),
            np.stack([p.attribute.velocity for p in points]),
            np.stack([p.attribute.shape for p in points]),
        )

    def log_peak(self) -> np.ndarray:
        """``log(u * sqrt|Lambda| (2 pi)^(-d/2))`` per point."""
        d = self.dim
        _, logdet = np.linalg.slogdet(self.shape) if len(self) else (None, np.zeros(0))
        return np.log(self.magnitude) + 0.5 * logdet - 0.5 * d * math.log(2 * math.pi)


@dataclass
class Panel:
    """Multivariate series ``values[i, j] = w(sites[i], times[j])``."""

    sites: np.ndarray
    times: np.ndarray
    values: np.ndarray
    sampling_interval: float | np.ndarray | None = None

    def __post_init__(self):
        self.sites = np.atleast_2d(np.asarray(self.sites, dtype=float))
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape != (self.sites.shape[0], self.times.size):
            raise DataError(f"values shape {self.values.shape} != (sites, times) = ({self.sites.shape[0]}, {self.times.size})")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            bad = int(np.argmax(np.diff(self.times) <= 0)) + 1
            raise DataError(f"times must be strictly increasing (row {bad})")
        if not np.all(np.isfinite(self.values)):
            raise DataError("panel values must be finite")
        if self.sampling_interval is None:
            self.sampling_interval = infer_interval(self.times)

    @property
    def n_sites(self) -> int:
        return self.sites.shape[0]


def infer_interval(times: np.ndarray) -> float | np.ndarray:
    """Common step of a uniform grid, or the per-gap list otherwise."""
    if times.size < 2:
        return 1.0
    gaps = np.diff(times)
    if np.allclose(gaps, gaps[0], rtol=1e-9, atol=0.0):
        return float(gaps[0])
    return gaps


def gaussian_log_density(z: np.ndarray, shape: np.ndarray) -> np.ndarray:
    """Row-wise ``log phi_Lambda(z)`` for ``z (n, d)`` and ``shape (n, d, d)``."""
    d = z.shape[1]
    _, logdet = np.linalg.slogdet(shape)
    return 0.5 * logdet - 0.5 * d * math.log(2 * math.pi) - 0.5 * batch_quadratic(shape, z)


def kernel_value(x, t: float, point: SupportPoint) -> float:
    """Unit-magnitude storm kernel at ``(x, t)``; zero outside the storm's life."""
    if not (point.birth_time <= t < point.birth_time + point.lifetime):
        return 0.0
    a = point.attribute
    z = np.atleast_1d(np.asarray(x, float)) - point.birth_location - a.velocity * (t - point.birth_time)
    return float(np.exp(gaussian_log_density(z[None, :], a.shape[None])[0]))


def _as_points(points) -> SupportPoints:
    if isinstance(points, SupportPoints):
        return points
    return SupportPoints.from_points(list(points))


def evaluate_process(points, x, t: float) -> float:
    """Y(x, t): the largest storm contribution at ``(x, t)`` (0 if none is alive)."""
    pts = _as_points(points)
    if len(pts) == 0:
        return 0.0
    live = (pts.birth_time <= t) & (t < pts.birth_time + pts.lifetime)
    if not live.any():
        return 0.0
    p = pts.subset(live)
    z = np.atleast_1d(np.asarray(x, float))[None, :] - p.birth_location - p.velocity * (t - p.birth_time)[:, None]
    logv = np.log(p.magnitude) + gaussian_log_density(z, p.shape)
    return float(np.exp(logv.max()))


def evaluate_running_max(points, x, t: float) -> float:
    """Y*(x, t) = sup of Y(x, s) over s in [0, t], in closed form per storm.

    A storm's contribution peaks at its closest point of approach
    ``sigma + v'L(x - xi) / v'Lv``; the peak is clamped to the part of its
    life inside [0, t].
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    pts = _as_points(points)
    if len(pts) == 0:
        return 0.0
    lo = np.maximum(pts.birth_time, 0.0)
    hi = np.minimum(pts.birth_time + pts.lifetime, t)
    ok = lo <= hi
    # life is half-open; a storm dying exactly at 0 was never alive on [0, t]
    ok &= pts.birth_time + pts.lifetime > 0.0
    if not ok.any():
        return 0.0
    p = pts.subset(ok)
    lo, hi = lo[ok], hi[ok]
    c = np.atleast_1d(np.asarray(x, float))[None, :] - p.birth_location
    A = batch_quadratic(p.shape, p.velocity)
    B = batch_quadratic(p.shape, p.velocity, c)
    moving = A > 0
    cpa = np.where(moving, B / np.where(moving, A, 1.0), 0.0)
    s_star = np.clip(p.birth_time + cpa, lo, hi)
    z = c - p.velocity * (s_star - p.birth_time)[:, None]
    logv = np.log(p.magnitude) + gaussian_log_density(z, p.shape)
    return float(np.exp(logv.max()))


def validity_floor(config: MsvConfig, seed: int | None = None) -> float:
    """Level above which the magnitude truncation does not bias exceedances.

    Equal to ``u_min`` times the (99.9% quantile of the) kernel peak value.
    """
    seed = config.seed if seed is None else seed
    return config.u_min * config.attributes.peak_density_quantile(derive_seed(seed, "floor"))


@dataclass(frozen=True)
class PaddingPlan:
    r_pad: float
    cap: float

    def pad(self, speed: np.ndarray, lifetime: np.ndarray) -> np.ndarray:
        return np.minimum(self.r_pad + speed * lifetime, self.cap)


def padding_plan(config: MsvConfig) -> PaddingPlan | None:
    """Per-storm padding ``r_pad + |v| tau``, capped at a high quantile.

    ``r_pad`` is where the Gaussian kernel falls below ``KERNEL_TAIL`` of its
    peak for the 99.9% quantile of length scale.
    """
    if config.padding in (None, 0, 0.0, "none"):
        return None
    if config.padding != "auto":
        p = float(config.padding)
        return PaddingPlan(p, p)
    length, _ = config.attributes.reach_quantiles(derive_seed(config.seed, "reach"), q=REACH_QUANTILE)
    r_pad = length * math.sqrt(-2.0 * math.log(KERNEL_TAIL))
    if config.attributes.stationary:
        return PaddingPlan(r_pad, r_pad)
    rng = rng_for(config.seed, "reach", "travel")
    V, _ = config.attributes.sample(rng, 100_000)
    travel = np.linalg.norm(V, axis=1) * rng.exponential(1.0 / config.delta, size=V.shape[0])
    travel = np.minimum(travel, np.linalg.norm(V, axis=1) * config.window)
    return PaddingPlan(r_pad, r_pad + float(np.quantile(travel, REACH_QUANTILE)))


def _box_volume(lo, hi, pad) -> np.ndarray:
    widths = (hi - lo)[None, :] + 2.0 * np.atleast_1d(pad)[:, None]
    return np.prod(widths, axis=1)


def expected_count(config: MsvConfig, draws: int = 100_000) -> float:
    """Expected number of simulated support points (Monte Carlo under padding)."""
    duration = config.horizon + config.window
    plan = padding_plan(config)
    lo, hi = config.box_lo, config.box_hi
    if plan is None:
        return config.point_rate * float(np.prod(hi - lo)) * duration
    rng = rng_for(config.seed, "expected_count")
    V, _ = config.attributes.sample(rng, draws)
    tau = rng.exponential(1.0 / config.delta, size=draws)
    vol = _box_volume(lo, hi, plan.pad(np.linalg.norm(V, axis=1), tau))
    return config.point_rate * float(vol.mean()) * duration


_CHUNK = 1 << 20


def sample_support_points(config: MsvConfig) -> SupportPoints:
    """Draw the support points of one realisation; deterministic given the seed."""
    d = config.dim
    lo, hi = config.box_lo, config.box_hi
    t0, t1 = -config.window, config.horizon
    plan = padding_plan(config)
    outer = 0.0 if plan is None else plan.cap
    lo_c, hi_c = lo - outer, hi + outer
    rng = rng_for(config.seed, "support")
    mean = config.point_rate * float(np.prod(hi_c - lo_c)) * (t1 - t0)
    if mean > 5e8:
        raise ConfigError(f"configuration implies {mean:.3g} candidate points; shrink box, horizon or raise u_min")
    n_cand = int(rng.poisson(mean))
    parts = []
    for start in range(0, n_cand, _CHUNK):
        m = min(_CHUNK, n_cand - start)
        xi = lo_c + (hi_c - lo_c) * rng.random((m, d))
        tau = rng.exponential(1.0 / config.delta, size=m)
        V = config.attributes.sample_velocities(rng, m) if hasattr(config.attributes, "sample_velocities") else None
        if V is not None:
            keep = np.ones(m, dtype=bool)
            if plan is not None:
                pad = plan.pad(np.linalg.norm(V, axis=1), tau)
                keep = np.all((xi >= lo - pad[:, None]) & (xi <= hi + pad[:, None]), axis=1)
            k = int(keep.sum())
            L = config.attributes.sample_shapes(rng, k)
            V = V[keep]
        else:
            V_all, L_all = config.attributes.sample(rng, m)
            keep = np.ones(m, dtype=bool)
            if plan is not None:
                pad = plan.pad(np.linalg.norm(V_all, axis=1), tau)
                keep = np.all((xi >= lo - pad[:, None]) & (xi <= hi + pad[:, None]), axis=1)
            V, L = V_all[keep], L_all[keep]
            k = int(keep.sum())
        sigma = t0 + (t1 - t0) * rng.random(k)
        u = config.u_min / (1.0 - rng.random(k))
        parts.append((u, xi[keep], sigma, tau[keep], V, L))
    if not parts:
        return SupportPoints.from_points([], dim=d)
    cols = list(zip(*parts))
    return SupportPoints(*(np.concatenate(c) for c in cols))


def _check_sites_times(config: MsvConfig, sites: np.ndarray, times: np.ndarray):
    lo, hi = config.box_lo, config.box_hi
    if sites.shape[1] != config.dim:
        raise DataError("site dimension differs from configuration")
    outside = np.any((sites < lo) | (sites > hi), axis=1)
    if outside.any():
        raise DataError(f"site {int(np.argmax(outside))} lies outside the box")
    if np.any(times < 0) or np.any(times > config.horizon):
        raise DataError("times must lie in [0, horizon]")


def render_panel(points: SupportPoints, sites, times) -> np.ndarray:
    """Evaluate Y at every (site, time) cell; times must be increasing."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    times = np.asarray(times, dtype=float)
    out = np.zeros((sites.shape[0], times.size))
    if len(points) == 0 or times.size == 0:
        return out
    _kernels.panel_max(
        points.log_peak(),
        np.ascontiguousarray(points.birth_location),
        np.ascontiguousarray(points.birth_time),
        np.ascontiguousarray(points.lifetime),
        np.ascontiguousarray(points.velocity),
        np.ascontiguousarray(points.shape),
        np.ascontiguousarray(sites),
        np.ascontiguousarray(times),
        out,
    )
    return out


def simulate_panel(config: MsvConfig, sites, times) -> Panel:
    """Simulate one realisation and record it on a site x time grid."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    times = np.asarray(times, dtype=float)
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise DataError("times must be strictly increasing")
    _check_sites_times(config, sites, times)
    points = sample_support_points(config)
    return Panel(sites, times, render_panel(points, sites, times))


def first_exceedance_times(points: SupportPoints, sites, levels, horizon: float = np.inf) -> np.ndarray:
    """Exact continuous-time first exceedance of ``levels[i]`` at ``sites[i]``.

    For each storm the set of times where ``u * phi > y`` is an interval (the
    exponent is quadratic in time), intersected with its life and with
    ``[0, horizon]``. Returns ``inf`` where no exceedance happens.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    levels = np.broadcast_to(np.asarray(levels, dtype=float), (sites.shape[0],))
    out = np.full(sites.shape[0], np.inf)
    if len(points) == 0:
        return out
    start = _exceedance_starts(points, sites, levels, horizon)
    return start.min(axis=1) if start.shape[1] else out


def _exceedance_starts(points: SupportPoints, sites, levels, horizon) -> np.ndarray:
    """``(n_sites, n_points)`` first times each storm pushes a site over its level."""
    logpk = points.log_peak()
    lo_life = np.maximum(points.birth_time, 0.0)
    hi_life = np.minimum(points.birth_time + points.lifetime, horizon)
    A = batch_quadratic(points.shape, points.velocity)
    out = np.full((sites.shape[0], len(points)), np.inf)
    for i, (x, y) in enumerate(zip(sites, levels)):
        r2 = 2.0 * (logpk - math.log(y))
        c = x[None, :] - points.birth_location
        B = batch_quadratic(points.shape, points.velocity, c)
        C = batch_quadratic(points.shape, c)
        with np.errstate(invalid="ignore", divide="ignore"):
            disc = B * B - A * (C - r2)
            root = np.sqrt(np.maximum(disc, 0.0))
            moving = A > 0
            s_lo = np.where(moving, (B - root) / np.where(moving, A, 1.0), -np.inf)
            s_hi = np.where(moving, (B + root) / np.where(moving, A, 1.0), np.inf)
            hit = np.where(moving, disc > 0, C < r2)
        first = np.maximum(points.birth_time + s_lo, lo_life)
        last = np.minimum(points.birth_time + s_hi, hi_life)
        ok = hit & (first < last) & (first <= horizon)
        out[i] = np.where(ok, first, np.inf)
    return out


def replicate_first_exceedances(
    config: MsvConfig, sites, levels, n_replicates: int, horizon: float
) -> np.ndarray:
    """First exceedance times from time 0 in independent replicates.

    Replicates are produced from a single simulation on a stacked time axis:
    replicate ``r`` owns births in ``[r (S + H) - S, (r + 1)(S + H) - S)`` and
    sees them shifted by ``-r (S + H)``, i.e. on its own window ``[-S, H)``,
    where ``H`` is the horizon and ``S`` the pre-history window. Poisson independence over disjoint windows makes the
    replicates independent. Returns ``(n_replicates, n_sites)``, ``inf`` when
    censored at ``horizon``.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    S = config.window
    span = S + horizon
    out = np.full((n_replicates, sites.shape[0]), np.inf)
    per_batch = max(1, int(2e6 // max(expected_count(replace(config, horizon=horizon), 20_000), 1.0)))
    for r0 in range(0, n_replicates, per_batch):
        nr = min(per_batch, n_replicates - r0)
        cfg = replace(
            config,
            horizon=nr * span - S,
            seed=derive_seed(config.seed, "replicates", r0),
        )
        pts = sample_support_points(cfg)
        if len(pts) == 0:
            continue
        rep = np.minimum(((pts.birth_time + S) // span).astype(np.int64), nr - 1)
        local = pts.birth_time - rep * span
        pts.birth_time = local
        starts = _exceedance_starts(pts, sites, levels, horizon)
        for i in range(sites.shape[0]):
            col = np.full(nr, np.inf)
            np.minimum.at(col, rep, starts[i])
            out[r0 : r0 + nr, i] = col
    return out
