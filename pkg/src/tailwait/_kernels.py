"""Compiled inner loops (numba)."""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def panel_max(log_peak, xi, sigma, tau, vel, shape, sites, times, out):
    """Running maximum of ``u * phi`` over live points into ``out[site, time]``.

    ``log_peak`` is ``log(u) + log(sqrt|Lambda| (2 pi)^(-d/2))`` per point.
    Times must be sorted. Life is the half-open interval [sigma, sigma + tau).
    """
    n_pts, d = xi.shape
    n_sites = sites.shape[0]
    c = np.empty(d)
    lv = np.empty(d)
    for k in range(n_pts):
        j0 = np.searchsorted(times, sigma[k], side="left")
        j1 = np.searchsorted(times, sigma[k] + tau[k], side="left")
        if j0 >= j1:
            continue
        # A = v'Lv, lv = L v
        A = 0.0
        for a in range(d):
            s = 0.0
            for b in range(d):
                s += shape[k, a, b] * vel[k, b]
            lv[a] = s
            A += vel[k, a] * s
        for i in range(n_sites):
            for a in range(d):
                c[a] = sites[i, a] - xi[k, a]
            B = 0.0
            C = 0.0
            for a in range(d):
                B += c[a] * lv[a]
                s = 0.0
                for b in range(d):
                    s += shape[k, a, b] * c[b]
                C += c[a] * s
            for j in range(j0, j1):
                ds = times[j] - sigma[k]
                q = C - 2.0 * B * ds + A * ds * ds
                val = math.exp(log_peak[k] - 0.5 * q)
                if val > out[i, j]:
                    out[i, j] = val


@njit(cache=True)
def _neumaier_add(total, comp, x):
    t = total + x
    if abs(total) >= abs(x):
        comp += (total - t) + x
    else:
        comp += (x - t) + total
    return t, comp


@njit(cache=True)
def gauss_kernel_sum(a, wa, b, wb, cutoff):
    """Sum of ``wa_i wb_j exp(-(a_i - b_j)^2)`` over sorted inputs.

    Pairs farther apart than ``cutoff`` are skipped; their terms are below
    ``exp(-cutoff^2)``. Accumulation is compensated.
    """
    total = 0.0
    comp = 0.0
    start = 0
    nb = b.shape[0]
    for i in range(a.shape[0]):
        x = a[i]
        while start < nb and b[start] < x - cutoff:
            start += 1
        j = start
        while j < nb and b[j] <= x + cutoff:
            diff = x - b[j]
            total, comp = _neumaier_add(total, comp, wa[i] * wb[j] * math.exp(-diff * diff))
            j += 1
    return total + comp


@njit(cache=True)
def _draw_categorical(gen, log_w, buf):
    k = log_w.shape[0]
    m = -np.inf
    for j in range(k):
        if log_w[j] > m:
            m = log_w[j]
    total = 0.0
    for j in range(k):
        total += math.exp(log_w[j] - m) if log_w[j] > -np.inf else 0.0
        buf[j] = total
    u = gen.random() * total
    for j in range(k):
        if u < buf[j]:
            return j
    return k - 1


@njit(cache=True)
def _safe_log(x):
    return math.log(x) if x > 0.0 else -np.inf


@njit(cache=True)
def _draw_cumulative(gen, cdf):
    k = cdf.shape[0]
    u = gen.random() * cdf[k - 1]
    for j in range(k):
        if u < cdf[j]:
            return j
    return k - 1


@njit(cache=True)
def gibbs_allocate(gen, imputed, weights, rates, labels):
    """Step 1: labels from atom/exponential responsibilities at the imputed values.

    Weights ``eta_j lambda_j exp(-lambda_j x)`` are shifted by the smallest
    rate among live components so the largest term never underflows.
    """
    K = weights.shape[0]
    coef = np.empty(K - 1)
    cdf = np.empty(K - 1)
    lam_min = np.inf
    for j in range(K - 1):
        coef[j] = weights[j + 1] * rates[j]
        if coef[j] > 0.0 and rates[j] < lam_min:
            lam_min = rates[j]
    for i in range(imputed.shape[0]):
        x = imputed[i]
        if x == 0.0:
            labels[i] = 0
            continue
        total = 0.0
        for j in range(K - 1):
            if coef[j] > 0.0:
                total += coef[j] * math.exp(-(rates[j] - lam_min) * x)
            cdf[j] = total
        if total > 0.0:
            labels[i] = 1 + _draw_cumulative(gen, cdf)
        else:
            labels[i] = 1 + _fallback_label(gen, weights, rates, x, cdf)


@njit(cache=True)
def _fallback_label(gen, weights, rates, x, buf):
    # all live weights underflowed: redo in log space
    K = weights.shape[0]
    log_w = np.empty(K - 1)
    for j in range(K - 1):
        log_w[j] = _safe_log(weights[j + 1]) + math.log(rates[j]) - rates[j] * x
    return _draw_categorical(gen, log_w, buf)


@njit(cache=True)
def gibbs_rates(gen, imputed, labels, K, a, b, rates_out):
    """Step 2: lambda_j ~ Gamma(a + n_j, rate b + S_j)."""
    n = np.zeros(K)
    s = np.zeros(K)
    for i in range(imputed.shape[0]):
        n[labels[i]] += 1.0
        s[labels[i]] += imputed[i]
    for j in range(1, K):
        rates_out[j - 1] = gen.gamma(a + n[j], 1.0 / (b + s[j]))
        if rates_out[j - 1] <= 0.0:
            rates_out[j - 1] = 1e-300


@njit(cache=True)
def gibbs_weights(gen, labels, K, alpha, weights_out):
    """Step 3: eta ~ Dirichlet(alpha + counts)."""
    counts = np.zeros(K)
    for i in range(labels.shape[0]):
        counts[labels[i]] += 1.0
    total = 0.0
    for j in range(K):
        weights_out[j] = gen.gamma(alpha + counts[j], 1.0)
        total += weights_out[j]
    if total == 0.0:
        # every gamma underflowed: put the mass on the most populated component
        best = 0
        for j in range(K):
            if counts[j] > counts[best]:
                best = j
        for j in range(K):
            weights_out[j] = 0.0
        weights_out[best] = 1.0
        total = 1.0
    for j in range(K):
        weights_out[j] /= total


@njit(cache=True)
def gibbs_impute(gen, uniq, inverse, width, weights, rates, imputed_out, comp_out):
    """Step 4: component from interval probabilities, then the uncensored value.

    Responsibilities depend on the observation only through its value, so they
    are tabulated once per distinct value in ``uniq``.
    """
    K = weights.shape[0]
    U = uniq.shape[0]
    table = np.empty((U, K))
    log_mass = np.empty(K - 1)
    for j in range(K - 1):
        lam = rates[j]
        log_mass[j] = _safe_log(weights[j + 1]) + _safe_log(-math.expm1(-lam * width))
    log_atom = _safe_log(weights[0])
    for u in range(U):
        table[u, 0] = log_atom if uniq[u] == 0.0 else -np.inf
        for j in range(K - 1):
            table[u, j + 1] = log_mass[j] - rates[j] * uniq[u]
    cdf = np.empty((U, K))
    for u in range(U):
        m = -np.inf
        for j in range(K):
            if table[u, j] > m:
                m = table[u, j]
        total = 0.0
        for j in range(K):
            if table[u, j] > -np.inf:
                total += math.exp(table[u, j] - m)
            cdf[u, j] = total
    for i in range(inverse.shape[0]):
        u = inverse[i]
        c = _draw_cumulative(gen, cdf[u])
        comp_out[i] = c
        lo = uniq[u]
        if c == 0:
            imputed_out[i] = 0.0
        else:
            lam = rates[c - 1]
            r = gen.random()
            # inverse CDF of Exponential(lam) truncated to [lo, lo + width]
            x = lo - math.log1p(r * math.expm1(-lam * width)) / lam
            if x < lo:
                x = lo
            elif x > lo + width:
                x = lo + width
            imputed_out[i] = x


@njit(cache=True)
def gibbs_run(gen, uniq, inverse, width, weights, rates, imputed, alpha, a, b,
              n_iter, burn_in, thin, W, R, keep_imputed, IMP, atom_trace):
    """Full chain; writes retained draws into ``W``, ``R`` (and ``IMP``)."""
    K = weights.shape[0]
    n = imputed.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    comp = np.zeros(n, dtype=np.int64)
    r = 0
    for it in range(n_iter):
        gibbs_allocate(gen, imputed, weights, rates, labels)
        gibbs_rates(gen, imputed, labels, K, a, b, rates)
        gibbs_weights(gen, labels, K, alpha, weights)
        gibbs_impute(gen, uniq, inverse, width, weights, rates, imputed, comp)
        atom_trace[it] = weights[0]
        if it >= burn_in and (it - burn_in) % thin == 0:
            W[r] = weights
            R[r] = rates
            if keep_imputed:
                IMP[r] = imputed
            r += 1
