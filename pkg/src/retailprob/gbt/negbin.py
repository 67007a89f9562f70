"""Negative binomial boosting with coordinate-wise updates of the size parameter ``r``.

Each outer round fits a full ensemble under the negative binomial loss with
``r`` held fixed, predicts the training set, and re-estimates ``r`` by
minimising the likelihood over ``ln r`` with the means held fixed.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .booster import GbtModel, GbtParams, PROFILES, _xy, fit_gbt
from .losses import R_BOUNDS, LossSpec, log_rising, nb_nll
from .tree import Binner

logger = logging.getLogger(__name__)

_INVPHI = (math.sqrt(5) - 1) / 2


def golden_section(fn, lo: float, hi: float, tol: float = 1e-6, max_iter: int = 200) -> float:
    """Minimise a unimodal ``fn`` on ``[lo, hi]``; returns the best abscissa seen, endpoints included."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fn(d)
    cands = [(fc, c), (fd, d), (fn(lo), lo), (fn(hi), hi)]
    return min(cands)[1]


def moment_r(y, bounds=R_BOUNDS) -> float:
    """Method-of-moments size ``m^2 / (v - m)``; the upper bound when ``v <= m``."""
    y = np.asarray(y, dtype=np.float64)
    m = y.mean()
    v = y.var(ddof=1) if y.size > 1 else 0.0
    if v <= m:
        return bounds[1]
    return float(np.clip(m * m / (v - m), *bounds))


def nb_profile_nll(x, mu, r: float) -> float:
    """NLL as a function of ``r`` for fixed means, dropping terms free of ``r``."""
    # -lnG(r+x) + lnG(r) + r ln(1 + mu/r) + x ln(mu + r), the x ln(mu) term is r-free
    return float(np.sum(-log_rising(r, x) + r * np.log1p(mu / r) + x * np.log(mu + r)))


def estimate_r(x, mu, bounds=R_BOUNDS, tol: float = 1e-6) -> float:
    """Maximum likelihood ``r`` given fixed means, by golden section on ``ln r``."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    best = golden_section(lambda s: nb_profile_nll(x, mu, math.exp(s)), lo, hi, tol)
    return float(math.exp(best))


def fit_gbt_negbin(
    matrix,
    params: GbtParams | None = None,
    r_init: float | None = None,
    max_outer: int = 20,
    tol: float = 1e-4,
    seed: int = 0,
) -> tuple[GbtModel, float]:
    """Alternate boosting under fixed ``r`` and 1-D likelihood updates of ``r``.

    Stops when ``|ln r_new - ln r_old| < tol`` or after ``max_outer`` rounds.
    The returned model carries ``r_hat`` and ``info`` with the ``r`` trace,
    the per-round NLL and a ``converged`` flag; when the loop does not
    converge the lowest-NLL round is returned.
    """
    params = params or PROFILES["default"]
    X, y = _xy(matrix)
    if not np.any(y > 0):
        raise ValueError("negative binomial fit needs at least one positive count")
    if max_outer < 1:
        raise ValueError("max_outer must be >= 1")
    r = float(np.clip(r_init, *R_BOUNDS)) if r_init is not None else moment_r(y)
    binner = Binner(params.max_bins, seed=seed).fit(X)
    binned = (binner, binner.transform(X))
    trace = [r]
    rounds = []
    converged = False
    for _ in range(max_outer):
        model = fit_gbt((X, y), LossSpec.negbin(r), params, seed=seed, binned=binned)
        f = model.raw_predict(X)
        mu = np.exp(f)
        r_new = estimate_r(y, mu)
        nll = nb_nll(y, f, r_new)
        model.r_hat = r
        rounds.append((nll, model, r_new))
        trace.append(r_new)
        step = abs(math.log(r_new) - math.log(r))
        r = r_new
        if step < tol:
            converged = True
            break
    if converged or max_outer == 1:
        nll, model, r_hat = rounds[-1]
    else:
        logger.warning("negative binomial r did not converge in %d rounds", max_outer)
        nll, model, r_hat = min(rounds, key=lambda t: t[0])
    model.r_hat = r_hat
    model.loss = LossSpec.negbin(r_hat)
    model.info.update({"r_trace": trace, "nll": [t[0] for t in rounds], "converged": converged})
    return model, r_hat
