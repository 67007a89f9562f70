"""Quantiles of Poisson and negative binomial count distributions.

Quantiles are the smallest ``k`` with ``CDF(k) >= u``.  The CDF is built by
summing the pmf from 0, with the pmf evaluated through the log-space
recursion ``log pmf(k) = log pmf(k-1) + log ratio(k)``, which stays finite
for large means and for sizes ``r`` close to the Poisson limit.  Summation
stops at ``mean + 50 sd``; if the accumulated mass never reaches ``u`` there,
the cap itself is returned.

The negative binomial is the failures-count form with mean ``r(1-p)/p`` and
variance ``r(1-p)/p^2``.
"""

from __future__ import annotations

import numpy as np

TAIL_SDS = 50.0
# CDF(k) >= u is tested as CDF(k) >= u - CDF_TOL to absorb summation rounding
CDF_TOL = 1e-12
_CHUNK_ELEMS = 4_000_000


def _check_levels(levels) -> np.ndarray:
    u = np.atleast_1d(np.asarray(levels, dtype=np.float64))
    if np.any((u <= 0) | (u >= 1)) or not np.all(np.isfinite(u)):
        raise ValueError(f"quantile levels must lie in (0, 1), got {u.tolist()}")
    return u


def _ppf_from_logpmf_steps(log_p0, log_step, kmax, levels):
    """Quantiles for a batch of distributions.

    ``log_p0`` is ``(m,)``; ``log_step(k)`` returns the ``(m, K)`` log ratios
    ``log pmf(k) - log pmf(k-1)`` for ``k = 1..K``.  ``kmax`` is the per-row cap.
    """
    m = log_p0.size
    K = int(kmax.max(initial=0))
    steps = log_step(np.arange(1, K + 1, dtype=np.float64))
    logpmf = np.concatenate([log_p0[:, None], log_p0[:, None] + np.cumsum(steps, axis=1)], axis=1)
    cdf = np.cumsum(np.exp(logpmf), axis=1)
    out = np.empty((m, levels.size), dtype=np.int64)
    for j, u in enumerate(levels):
        hit = cdf >= u - CDF_TOL
        k = np.argmax(hit, axis=1)
        k = np.where(hit.any(axis=1), k, K)
        out[:, j] = np.minimum(k, kmax)
    return out


def _batched(n_rows, kmax, fn):
    """Run ``fn(index_array)`` over row chunks of similar cap within an element budget."""
    order = np.argsort(kmax, kind="stable")
    widths = kmax[order] + 1
    results = []
    start = 0
    while start < n_rows:
        # widths are sorted, so a chunk's cost is its length times its last width
        stop = np.arange(start + 1, n_rows + 1)
        fits = (stop - start) * widths[stop - 1] <= _CHUNK_ELEMS
        end = start + max(1, int(fits.sum()))
        idx = order[start:end]
        results.append((idx, fn(idx)))
        start = end
    return results


def poisson_ppf(lam, levels) -> np.ndarray:
    """Poisson quantiles; returns shape ``lam.shape + (len(levels),)``."""
    u = _check_levels(levels)
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("Poisson rates must be finite and >= 0")
    flat = lam.reshape(-1)
    out = np.zeros((flat.size, u.size), dtype=np.int64)
    pos = flat > 0
    if pos.any():
        lp = flat[pos]
        kmax = np.ceil(lp + TAIL_SDS * np.sqrt(lp) + 1).astype(np.int64)

        def run(idx):
            lam_i = lp[idx]
            return _ppf_from_logpmf_steps(
                -lam_i,
                lambda k: np.log(lam_i)[:, None] - np.log(k)[None, :],
                kmax[idx],
                u,
            )

        sub = np.empty((lp.size, u.size), dtype=np.int64)
        for idx, res in _batched(lp.size, kmax, run):
            sub[idx] = res
        out[pos] = sub
    return out.reshape(lam.shape + (u.size,))


def nbinom_ppf(r, p, levels) -> np.ndarray:
    """Negative binomial quantiles (failures before the ``r``-th success, success prob ``p``)."""
    u = _check_levels(levels)
    r, p = np.broadcast_arrays(np.asarray(r, dtype=np.float64), np.asarray(p, dtype=np.float64))
    if np.any(r <= 0) or np.any((p <= 0) | (p > 1)):
        raise ValueError("need r > 0 and 0 < p <= 1")
    shape = r.shape
    r, p = r.reshape(-1), p.reshape(-1)
    q = 1.0 - p
    out = np.zeros((r.size, u.size), dtype=np.int64)
    pos = q > 0
    if pos.any():
        rr, pp, qq = r[pos], p[pos], q[pos]
        mean = rr * qq / pp
        sd = np.sqrt(rr * qq) / pp
        kmax = np.ceil(mean + TAIL_SDS * sd + 1).astype(np.int64)

        def run(idx):
            r_i, q_i = rr[idx], qq[idx]
            return _ppf_from_logpmf_steps(
                r_i * np.log1p(-q_i),
                lambda k: np.log((r_i[:, None] + k[None, :] - 1) / k[None, :]) + np.log(q_i)[:, None],
                kmax[idx],
                u,
            )

        sub = np.empty((rr.size, u.size), dtype=np.int64)
        for idx, res in _batched(rr.size, kmax, run):
            sub[idx] = res
        out[pos] = sub
    return out.reshape(shape + (u.size,))


def nbinom_from_moments(mean, var):
    """Method-of-moments ``(r, p)`` with ``p = mean / var`` and ``r = mean p / (1 - p)``."""
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    p = mean / var
    r = mean * p / (1.0 - p)
    return r, p
