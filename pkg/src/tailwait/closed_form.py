"""Analytic laws of the Gaussian max-stable velocity process.

Integrals over the attribute law go through
:meth:`~tailwait.attributes.AttributeDistribution.expect`: exact for point
masses and empirical laws, Monte Carlo (with standard errors) otherwise.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp, ndtr

from ._rng import rng_for
from .attributes import AttributeDistribution, Estimate, batch_quadratic
from .errors import ConfigError

MAX_JOINT = 12
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ProcessParams:
    beta: float
    delta: float
    attributes: AttributeDistribution
    mc_draws: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not (self.beta > 0 and self.delta > 0):
            raise ConfigError("beta and delta must be positive")
        if self.mc_draws < 1:
            raise ConfigError("mc_draws must be >= 1")

    @property
    def scale(self) -> float:
        """Frechet scale beta / delta."""
        return self.beta / self.delta


class ExceedancePoint(NamedTuple):
    x: np.ndarray
    t: float
    y: float


class KappaLaw(NamedTuple):
    survival: float | np.ndarray
    a: float
    b: float


class NullRates(NamedTuple):
    a1: float
    a2: float
    b1: float
    b2: float


class V0Rates(NamedTuple):
    lambda0: float
    lambda1: float
    lambda2: float
    lambda_plus: float


def _point(p) -> ExceedancePoint:
    x, t, y = p
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not y > 0:
        raise ValueError(f"levels must be positive, got {y}")
    return ExceedancePoint(x, float(t), float(y))


def phi_ratio_term(S: np.ndarray, log_ratio: float | np.ndarray, sign: float) -> np.ndarray:
    """``Phi(log_ratio / S + sign * S / 2)`` with the ``S -> 0`` limit.

    At ``S == 0`` the value is 1 or 0 by the sign of ``log_ratio`` and 1/2
    when ``log_ratio`` is also 0.
    """
    S = np.asarray(S, dtype=float)
    log_ratio = np.broadcast_to(np.asarray(log_ratio, dtype=float), S.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = log_ratio / S + sign * S / 2.0
    limit = np.where(log_ratio > 0, 1.0, np.where(log_ratio < 0, 0.0, 0.5))
    return np.where(S > 0, ndtr(arg), limit)


def marginal_cdf(y: float, params: ProcessParams) -> float:
    """P[Y(x, t) <= y]: Frechet with scale beta / delta."""
    if not y > 0:
        raise ValueError("y must be positive")
    return math.exp(-params.scale / y)


def speed_moment(params: ProcessParams) -> Estimate:
    """E[sqrt(v' Lambda v / 2 pi)] over the attribute law."""

    def f(V, L):
        return np.sqrt(np.maximum(batch_quadratic(L, V), 0.0) / (2.0 * math.pi))

    return params.attributes.expect(f, params.mc_draws, params.seed, "speed_moment")


def kappa_rates(y: float, params: ProcessParams) -> tuple[float, float]:
    """``(a, b)`` with P[kappa > t] = exp(-a - b t)."""
    if not y > 0:
        raise ValueError("y must be positive")
    a = params.scale / y
    return a, a * (params.delta + speed_moment(params).value)


def kappa_survival(t, y: float, params: ProcessParams) -> KappaLaw:
    """Survival of the time until the first exceedance of ``y`` at one site.

    The same expression is the CDF of the running maximum, P[Y*(x, t) < y].
    The law has an atom ``1 - exp(-a)`` at zero.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    a, b = kappa_rates(y, params)
    surv = np.exp(-a - b * t_arr)
    return KappaLaw(float(surv) if surv.ndim == 0 else surv, a, b)


def _centres(points: Sequence[ExceedancePoint], V: np.ndarray) -> np.ndarray:
    """``(n_draws, J, d)`` kernel centres ``x_j - v t_j``."""
    X = np.stack([p.x for p in points])
    T = np.array([p.t for p in points])
    return X[None, :, :] - T[None, :, None] * V[:, None, :]


def nu_intersection(subset: Sequence, params: ProcessParams, label: str = "nu") -> Estimate:
    """Exponent measure of simultaneous exceedance of every point in ``subset``.

    The spatial integral of the pointwise minimum of the scaled kernels is
    estimated by importance sampling from the equal-weight mixture of the
    kernels themselves; the weight ``min / mixture`` is bounded by ``J / y``.
    """
    pts = [_point(p) for p in subset]
    if not pts:
        raise ValueError("subset must be nonempty")
    J = len(pts)
    t_hi, t_lo = max(p.t for p in pts), min(p.t for p in pts)
    front = params.scale * math.exp(-params.delta * (t_hi - t_lo))
    if J == 1:
        return Estimate(front / pts[0].y, 0.0)
    log_y = np.log([p.y for p in pts])
    atoms = params.attributes.atoms()

    def integrand(V, L, rng_block):
        n, d = V.shape
        centres = _centres(pts, V)
        comp = rng_block.integers(0, J, size=n)
        chol = np.linalg.cholesky(np.linalg.inv(L))
        eps = rng_block.standard_normal((n, d))
        z = centres[np.arange(n), comp] + np.einsum("nij,nj->ni", chol, eps)
        diff = z[:, None, :] - centres
        q = np.einsum("nji,nik,njk->nj", diff, L, diff)
        log_k = -0.5 * q
        return np.exp(np.min(log_k - log_y[None, :], axis=1) - logsumexp(log_k, axis=1) + math.log(J))

    if atoms is not None:
        # discrete law: exact over attributes, Monte Carlo over space only
        V_at, L_at, w = atoms
        means, variances = [], []
        for k in range(len(w)):
            if w[k] == 0:
                means.append(0.0)
                variances.append(0.0)
                continue
            n = params.mc_draws
            V = np.broadcast_to(V_at[k], (n, V_at.shape[1]))
            L = np.broadcast_to(L_at[k], (n,) + L_at.shape[1:])
            vals = integrand(V, L, rng_for(params.seed, label, "atom", k))
            means.append(vals.mean())
            variances.append(vals.var(ddof=1) / n if n > 1 else 0.0)
        mean = float(np.dot(w, means))
        se = float(math.sqrt(np.dot(w**2, variances)))
        return Estimate(front * mean, front * se)

    block = [0]

    def f(V, L):
        block[0] += 1
        return integrand(V, L, rng_for(params.seed, label, "space", block[0]))

    est = params.attributes.expect(f, params.mc_draws, params.seed, label)
    return Estimate(front * est.value, front * est.se)


def joint_cdf(query: Sequence, params: ProcessParams) -> Estimate:
    """P[Y(x_i, t_i) <= y_i for all i] by inclusion-exclusion over subsets.

    Every subset term uses the same random streams, which keeps the
    alternating sum well behaved. The standard error is a delta-method bound
    that treats the subset terms as independent.
    """
    pts = [_point(p) for p in query]
    n = len(pts)
    if n == 0:
        raise ValueError("query must be nonempty")
    if n > MAX_JOINT:
        raise ValueError(f"at most {MAX_JOINT} points are supported ({2**n - 1} subset terms)")
    terms, var = [], 0.0
    for size in range(1, n + 1):
        sign = 1.0 if size % 2 else -1.0
        for idx in itertools.combinations(range(n), size):
            est = nu_intersection([pts[i] for i in idx], params)
            terms.append(sign * est.value)
            var += est.se**2
    union = math.fsum(terms)
    value = math.exp(-union)
    return Estimate(min(max(value, 0.0), 1.0), value * math.sqrt(var))


def bivariate_cdf_gaussian(p1, p2, params: ProcessParams) -> Estimate:
    """Closed-form joint CDF of the process at two space-time points."""
    a, b = _point(p1), _point(p2)
    lag = abs(b.t - a.t)
    decay = math.exp(-params.delta * lag)
    h = b.x - a.x
    log12 = math.log(a.y / b.y)

    def f(V, L):
        dv = h[None, :] - (b.t - a.t) * V
        S = np.sqrt(np.maximum(batch_quadratic(L, dv), 0.0))
        return phi_ratio_term(S, -log12, +1.0) / a.y + phi_ratio_term(S, log12, +1.0) / b.y

    est = params.attributes.expect(f, params.mc_draws, params.seed, "bivariate")
    union = params.scale * ((1.0 - decay) * (1.0 / a.y + 1.0 / b.y) + decay * est.value)
    value = math.exp(-union)
    return Estimate(value, value * params.scale * decay * est.se)


def null_rates(y1: float, y2: float, params: ProcessParams) -> NullRates:
    """Atom exponents and exponential rates of two independent waiting times."""
    a1, b1 = kappa_rates(y1, params)
    a2, b2 = kappa_rates(y2, params)
    return NullRates(a1, a2, b1, b2)


def independence_survival(t, rates: NullRates):
    """P[|kappa_1 - kappa_2| > t] when the two waiting times are independent."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    a1, a2, b1, b2 = rates
    if not (b1 > 0 and b2 > 0):
        raise ValueError("exponential rates must be positive")
    both = math.exp(-a1 - a2)
    # P[X - Y > t] = e^{-b1 t} b2 / (b1 + b2) for independent X ~ Exp(b1), Y ~ Exp(b2)
    c1 = b2 * both / (b1 + b2) + (-math.expm1(-a2)) * math.exp(-a1)
    c2 = b1 * both / (b1 + b2) + (-math.expm1(-a1)) * math.exp(-a2)
    out = c1 * np.exp(-b1 * t_arr) + c2 * np.exp(-b2 * t_arr)
    return float(out) if out.ndim == 0 else out


def independence_atom(rates: NullRates) -> float:
    """P[kappa_1 = kappa_2 = 0] under independence."""
    return (-math.expm1(-rates.a1)) * (-math.expm1(-rates.a2))


def waitv0_rates(x1, x2, y1: float, y2: float, params: ProcessParams) -> tuple[V0Rates, float]:
    """Rates of the pair waiting-time law for stationary storms.

    Returns the rates and the Monte Carlo standard error of ``lambda0``.
    Equal levels take the one-integral route through
    ``Z = E[2 Phi(-S/2)]``.
    """
    if not params.attributes.stationary:
        raise ConfigError("waiting-time rates in closed form need a zero-velocity attribute law")
    if not (y1 > 0 and y2 > 0):
        raise ValueError("levels must be positive")
    h = np.atleast_1d(np.asarray(x2, float)) - np.atleast_1d(np.asarray(x1, float))

    def spread(L):
        return np.sqrt(np.maximum(batch_quadratic(L, np.broadcast_to(h, (L.shape[0], h.size))), 0.0))

    k = params.scale
    if y1 == y2:
        est = params.attributes.expect(lambda V, L: 2.0 * ndtr(-spread(L) / 2.0), params.mc_draws, params.seed, "waitv0")
        Z = est.value
        lam0 = k * Z / y1
        lam1 = k * (1.0 - Z) / y1
        return V0Rates(lam0, lam1, lam1, lam0 + 2.0 * lam1), k * est.se / y1

    L12 = math.log(y1 / y2)

    def terms(V, L):
        S = spread(L)
        p_a = phi_ratio_term(S, L12, -1.0)  # Phi(log(y1/y2)/S - S/2)
        p_b = phi_ratio_term(S, -L12, -1.0)  # Phi(log(y2/y1)/S - S/2)
        p_c = phi_ratio_term(S, -L12, +1.0)  # Phi(log(y2/y1)/S + S/2)
        p_d = phi_ratio_term(S, L12, +1.0)  # Phi(log(y1/y2)/S + S/2)
        return np.stack([p_a / y1 + p_b / y2, p_c / y1 - p_b / y2, p_d / y2 - p_a / y1])

    # the attribute integral is vector valued; integrate each row with one stream
    vals = [
        params.attributes.expect(lambda V, L, r=r: terms(V, L)[r], params.mc_draws, params.seed, "waitv0")
        for r in range(3)
    ]
    lam0, lam1, lam2 = (k * v.value for v in vals)
    lam1, lam2 = max(lam1, 0.0), max(lam2, 0.0)
    return V0Rates(lam0, lam1, lam2, lam0 + lam1 + lam2), k * vals[0].se


def waitv0_survival(t, rates: V0Rates, delta: float):
    """``(P[kappa_D > t], P[kappa_D = 0])`` for stationary storms."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    l0, l1, l2, lp = rates
    if lp <= 0:
        raise ValueError("rates must not all vanish")
    g = 1.0 + delta * t_arr
    surv = np.exp(-(l0 + l2) * g) * (1.0 - (l0 + l2) / lp * math.exp(-l1)) + np.exp(-(l0 + l1) * g) * (
        1.0 - (l0 + l1) / lp * math.exp(-l2)
    )
    atom = 1.0 - math.exp(-l0) * (math.exp(-l1) + math.exp(-l2)) + math.exp(-lp) * (1.0 + l0 / lp)
    return (float(surv) if surv.ndim == 0 else surv), atom


def stoch_bound(t: float, x1, x2, y1: float, y2: float, params: ProcessParams) -> Estimate:
    """Upper bound ``exp(-eta)`` on P[kappa_D > t] for moving Gaussian storms.

    ``eta`` counts storms that pass their closest approach to both sites
    within ``[0, t]``. Attribute draws with ``v'Lv = 0`` contribute nothing.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    h = np.atleast_1d(np.asarray(x2, float)) - np.atleast_1d(np.asarray(x1, float))
    log12 = math.log(y1 / y2)

    def f(V, L):
        n = V.shape[0]
        H = np.broadcast_to(h, (n, h.size))
        A = batch_quadratic(L, V)
        moving = A > 0
        A_safe = np.where(moving, A, 1.0)
        lag = batch_quadratic(L, V, H) / A_safe
        perp = H - lag[:, None] * V
        S = np.sqrt(np.maximum(batch_quadratic(L, H, perp), 0.0))
        gap = np.abs(lag)
        inside = moving & (gap <= t)
        weight = np.where(inside, (t - gap) * np.exp(-params.delta * gap), 0.0)
        bracket = phi_ratio_term(S, log12, -1.0) / y1 + phi_ratio_term(S, -log12, -1.0) / y2
        return weight * bracket * np.sqrt(np.where(moving, A, 0.0))

    est = params.attributes.expect(f, params.mc_draws, params.seed, "stoch_bound")
    factor = params.beta / _SQRT_2PI
    eta = factor * est.value
    bound = math.exp(-eta)
    return Estimate(bound, bound * factor * est.se)
