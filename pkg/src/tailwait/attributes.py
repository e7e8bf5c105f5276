"""Storm attributes (velocity, kernel shape) and their distributions.

An attribute distribution is anything that can draw ``n`` velocity vectors and
``n`` shape matrices at once. Three variants are provided:

* :class:`PointMass` -- every storm shares one attribute.
* :class:`Factored` -- Wishart shapes, inverse-Gaussian speeds and wrapped
  Laplace headings, drawn independently.
* :class:`Empirical` -- a weighted finite list of attributes.

Expectations over the law go through :meth:`AttributeDistribution.expect`,
which is exact for the discrete variants and plain Monte Carlo otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import stats

from ._rng import rng_for
from .errors import ConfigError

_MC_BLOCK = 1 << 15


class Estimate(NamedTuple):
    """A Monte Carlo (or exact, ``se == 0``) estimate."""

    value: float
    se: float


@dataclass(frozen=True)
class Attribute:
    velocity: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.velocity, dtype=float))
        L = np.atleast_2d(np.asarray(self.shape, dtype=float))
        if L.shape != (v.size, v.size):
            raise ConfigError(f"shape matrix {L.shape} does not match velocity dimension {v.size}")
        if not np.allclose(L, L.T, rtol=0.0, atol=1e-10):
            raise ConfigError("shape matrix must be symmetric")
        if np.linalg.eigvalsh(L).min() <= 0:
            raise ConfigError("shape matrix must be positive definite")
        object.__setattr__(self, "velocity", v)
        object.__setattr__(self, "shape", L)

    @property
    def dim(self) -> int:
        return self.velocity.size


def unit_directions(angles: np.ndarray) -> np.ndarray:
    """Hyperspherical unit vectors from ``(n, k-1)`` angles (k >= 2).

    The first angle is measured from the first axis, so angle 0 in the plane
    points along +x.
    """
    n, m = angles.shape
    out = np.ones((n, m + 1))
    sin_prod = np.ones(n)
    for h in range(m):
        out[:, h] = sin_prod * np.cos(angles[:, h])
        sin_prod = sin_prod * np.sin(angles[:, h])
    out[:, m] = sin_prod
    return out


def wrap_angle(phi: np.ndarray) -> np.ndarray:
    """Map angles to (-pi, pi]."""
    wrapped = np.mod(phi + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


class AttributeDistribution:
    """Base class; subclasses implement :meth:`sample`."""

    dim: int

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Return velocities ``(n, d)`` and shapes ``(n, d, d)``."""
        raise NotImplementedError

    def atoms(self) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
        """``(velocities, shapes, weights)`` for discrete laws, else ``None``."""
        return None

    @property
    def stationary(self) -> bool:
        """True when the law puts all its mass on zero velocity."""
        return False

    def expect(
        self,
        f: Callable[[np.ndarray, np.ndarray], np.ndarray],
        mc_draws: int,
        seed: int,
        label: str = "expect",
    ) -> Estimate:
        """E[f(v, Lambda)] where ``f`` maps batched arrays to ``(n,)`` values.

        Discrete laws are integrated exactly. Otherwise draws are produced in
        fixed blocks of 2**15, each from its own derived stream, so the result
        does not depend on how a caller might split the work.
        """
        atoms = self.atoms()
        if atoms is not None:
            V, L, w = atoms
            vals = np.asarray(f(V, L), dtype=float)
            return Estimate(math.fsum(w * vals), 0.0)
        if mc_draws < 1:
            raise ConfigError("mc_draws must be >= 1")
        sums, sq_sums = [], []
        done = 0
        block = 0
        while done < mc_draws:
            m = min(_MC_BLOCK, mc_draws - done)
            V, L = self.sample(rng_for(seed, label, block), m)
            vals = np.asarray(f(V, L), dtype=float)
            sums.append(vals.sum())
            sq_sums.append(np.square(vals).sum())
            done += m
            block += 1
        mean = math.fsum(sums) / mc_draws
        if mc_draws == 1:
            return Estimate(mean, float("inf"))
        var = max(math.fsum(sq_sums) / mc_draws - mean * mean, 0.0) * mc_draws / (mc_draws - 1)
        return Estimate(mean, math.sqrt(var / mc_draws))

    def reach_quantiles(self, seed: int, n: int = 100_000, q: float = 0.999) -> tuple[float, float]:
        """High quantiles of kernel length scale and of speed.

        Length scale is ``1/sqrt(smallest eigenvalue)``; both quantiles are
        estimated from ``n`` draws (exact for discrete laws).
        """
        atoms = self.atoms()
        if atoms is not None:
            V, L, w = atoms
            ls = 1.0 / np.sqrt(np.linalg.eigvalsh(L)[:, 0])
            sp = np.linalg.norm(V, axis=1)
            return float(ls.max()), float(sp[w > 0].max())
        V, L = self.sample(rng_for(seed, "reach"), n)
        ls = 1.0 / np.sqrt(np.linalg.eigvalsh(L)[:, 0])
        sp = np.linalg.norm(V, axis=1)
        return float(np.quantile(ls, q)), float(np.quantile(sp, q))

    def peak_density_quantile(self, seed: int, n: int = 100_000, q: float = 0.999) -> float:
        """High quantile of the kernel's peak value ``sqrt|Lambda| (2 pi)^(-d/2)``."""
        atoms = self.atoms()
        if atoms is not None:
            _, L, w = atoms
            peaks = np.sqrt(np.linalg.det(L)) * (2 * np.pi) ** (-self.dim / 2)
            return float(peaks[w > 0].max())
        _, L = self.sample(rng_for(seed, "peak"), n)
        peaks = np.sqrt(np.linalg.det(L)) * (2 * np.pi) ** (-self.dim / 2)
        return float(np.quantile(peaks, q))


@dataclass(frozen=True)
class PointMass(AttributeDistribution):
    attribute: Attribute

    @property
    def dim(self) -> int:
        return self.attribute.dim

    @property
    def stationary(self) -> bool:
        return not np.any(self.attribute.velocity)

    def sample(self, rng, n):
        V = np.broadcast_to(self.attribute.velocity, (n, self.dim)).copy()
        L = np.broadcast_to(self.attribute.shape, (n, self.dim, self.dim)).copy()
        return V, L

    def atoms(self):
        return (
            self.attribute.velocity[None, :],
            self.attribute.shape[None, :, :],
            np.ones(1),
        )


@dataclass(frozen=True)
class Empirical(AttributeDistribution):
    attributes: tuple[Attribute, ...]
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        attrs = tuple(self.attributes)
        if not attrs:
            raise ConfigError("empirical attribute law needs at least one attribute")
        if len({a.dim for a in attrs}) != 1:
            raise ConfigError("empirical attributes must share one dimension")
        w = np.full(len(attrs), 1.0 / len(attrs)) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (len(attrs),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError("empirical weights must be nonnegative and sum to 1")
        object.__setattr__(self, "attributes", attrs)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.attributes[0].dim

    @property
    def stationary(self) -> bool:
        return all(not np.any(a.velocity) for a, w in zip(self.attributes, self.weights) if w > 0)

    def sample(self, rng, n):
        idx = rng.choice(len(self.attributes), size=n, p=self.weights)
        V = np.stack([a.velocity for a in self.attributes])[idx]
        L = np.stack([a.shape for a in self.attributes])[idx]
        return V, L

    def atoms(self):
        V = np.stack([a.velocity for a in self.attributes])
        L = np.stack([a.shape for a in self.attributes])
        return V, L, self.weights


@dataclass(frozen=True)
class Factored(AttributeDistribution):
    """Wishart shape, inverse-Gaussian speed, wrapped-Laplace headings.

    ``speed_mean=None`` gives a stationary law (v = 0) with random shapes.
    In one dimension there are no heading angles and storms move toward +x.
    """

    wishart_df: float
    wishart_scale: np.ndarray
    speed_mean: float | None
    speed_shape: float = 1.0
    angle_rate: float = 1.0

    def __post_init__(self):
        psi = np.atleast_2d(np.asarray(self.wishart_scale, dtype=float))
        object.__setattr__(self, "wishart_scale", psi)
        d = psi.shape[0]
        if psi.shape != (d, d) or np.linalg.eigvalsh(psi).min() <= 0:
            raise ConfigError("wishart_scale must be a positive-definite square matrix")
        if self.wishart_df < d:
            raise ConfigError(f"wishart_df must be >= dimension {d}")
        if self.speed_mean is not None and (self.speed_mean <= 0 or self.speed_shape <= 0):
            raise ConfigError("speed_mean and speed_shape must be positive")
        if self.angle_rate <= 0:
            raise ConfigError("angle_rate must be positive")

    @property
    def dim(self) -> int:
        return self.wishart_scale.shape[0]

    @property
    def stationary(self) -> bool:
        return self.speed_mean is None

    def sample_shapes(self, rng, n):
        d = self.dim
        if n == 0:
            return np.zeros((0, d, d))
        draws = stats.wishart(df=self.wishart_df, scale=self.wishart_scale).rvs(size=n, random_state=rng)
        return np.asarray(draws, dtype=float).reshape(n, d, d)

    def sample_velocities(self, rng, n):
        d = self.dim
        if self.speed_mean is None:
            return np.zeros((n, d))
        speed = rng.wald(self.speed_mean, self.speed_shape, size=n)
        if d == 1:
            return speed[:, None]
        angles = wrap_angle(rng.laplace(0.0, 1.0 / self.angle_rate, size=(n, d - 1)))
        return speed[:, None] * unit_directions(angles)

    def sample(self, rng, n):
        V = self.sample_velocities(rng, n)
        L = self.sample_shapes(rng, n)
        return V, L


def table1_attributes() -> Factored:
    """The planar storm law used in the simulation study."""
    return Factored(wishart_df=7, wishart_scale=np.eye(2), speed_mean=0.1, speed_shape=0.5, angle_rate=0.5)


def from_mapping(spec: dict) -> AttributeDistribution:
    """Build an attribute law from a config mapping (``type`` selects the variant)."""
    kind = str(spec.get("type", "")).lower()
    if kind in ("point_mass", "pointmass"):
        return PointMass(Attribute(spec["velocity"], spec["shape"]))
    if kind == "factored":
        return Factored(
            wishart_df=float(spec["wishart_df"]),
            wishart_scale=np.asarray(spec["wishart_scale"], dtype=float),
            speed_mean=None if spec.get("speed_mean") is None else float(spec["speed_mean"]),
            speed_shape=float(spec.get("speed_shape", 1.0)),
            angle_rate=float(spec.get("angle_rate", 1.0)),
        )
    if kind == "empirical":
        attrs = tuple(Attribute(a["velocity"], a["shape"]) for a in spec["attributes"])
        return Empirical(attrs, spec.get("weights"))
    if kind == "table1":
        return table1_attributes()
    raise ConfigError(f"unknown attribute law type {spec.get('type')!r}")


def to_mapping(dist: AttributeDistribution) -> dict:
    if isinstance(dist, PointMass):
        a = dist.attribute
        return {"type": "point_mass", "velocity": a.velocity.tolist(), "shape": a.shape.tolist()}
    if isinstance(dist, Factored):
        return {
            "type": "factored",
            "wishart_df": dist.wishart_df,
            "wishart_scale": dist.wishart_scale.tolist(),
            "speed_mean": dist.speed_mean,
            "speed_shape": dist.speed_shape,
            "angle_rate": dist.angle_rate,
        }
    if isinstance(dist, Empirical):
        return {
            "type": "empirical",
            "attributes": [{"velocity": a.velocity.tolist(), "shape": a.shape.tolist()} for a in dist.attributes],
            "weights": dist.weights.tolist(),
        }
    raise TypeError(type(dist))


def batch_quadratic(L: np.ndarray, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Row-wise ``a' L b`` for stacked ``L (n,d,d)``, ``a, b (n,d)``."""
    if b is None:
        b = a
    return np.einsum("ni,nij,nj->n", a, L, b)

