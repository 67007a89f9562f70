"""Historical-proportion disaggregation and distributional quantile forecasts.

Point forecasts at the aggregate level are split to the children with the
share of training sales each child contributed.  Every point forecast is then
turned into a Poisson or a negative binomial predictive distribution (method
of moments against the in-sample variance of the same series) and from there
into integer quantile forecasts.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .distributions import nbinom_ppf, poisson_ppf
from .features import ForecastPath, NumericalError
from .series import Dataset

logger = logging.getLogger(__name__)

M5_LEVELS = (0.005, 0.025, 0.165, 0.25, 0.5, 0.75, 0.835, 0.975, 0.995)
RETAIL_LEVELS = (0.1, 0.9)
QUANTILE_PROFILES = {"m5": M5_LEVELS, "retail": RETAIL_LEVELS, "favorita": RETAIL_LEVELS, "generic": RETAIL_LEVELS}


class Dist(str, enum.Enum):
    POISSON = "poisson"
    NEGBIN = "negbin"


# -- proportions -----------------------------------------------------------


@dataclass
class ProportionMap:
    """``rho[(aggregate_id, child_id)]``; ``uniform`` lists aggregates with no training sales."""

    rho: dict[tuple[str, str], float]
    uniform: list[str] = field(default_factory=list)

    def shares(self, aggregate_id: str, children: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.rho[(aggregate_id, c)] for c in children])
        except KeyError as exc:
            raise KeyError(f"no proportion for child {exc.args[0][1]!r} of {aggregate_id!r}") from None


def compute_proportions(dataset: Dataset, n_train: int | None = None) -> ProportionMap:
    """Share of each child in its aggregate's training-set sales.

    Aggregates that sold nothing in training split uniformly over their
    children and are listed in ``ProportionMap.uniform``.
    """
    n_train = dataset.n_train if n_train is None else n_train
    rho = {}
    uniform = []
    for agg_id, children in dataset.hierarchy.children_of.items():
        sums = np.array([dataset.get(c, "L").values[:n_train].sum() for c in children], dtype=np.float64)
        total = sums.sum()
        if total <= 0:
            shares = np.full(len(children), 1.0 / len(children))
            uniform.append(agg_id)
            logger.info("aggregate %s has no training sales; using uniform proportions", agg_id)
        else:
            shares = sums / total
        for c, s in zip(children, shares):
            rho[(agg_id, c)] = float(s)
    return ProportionMap(rho, uniform)


def disaggregate(
    agg_path: ForecastPath, rho: ProportionMap, children: Sequence[str]
) -> list[ForecastPath]:
    """Child point forecasts ``rho_{j,i} * A_hat_{t,j}``."""
    shares = rho.shares(agg_path.series_id, children)
    return [ForecastPath(c, s * agg_path.values) for c, s in zip(children, shares)]


def disaggregate_matrix(
    agg_forecasts: np.ndarray, agg_ids: Sequence[str], dataset: Dataset, rho: ProportionMap
) -> tuple[list[str], np.ndarray]:
    """Vectorised :func:`disaggregate` over many aggregates; returns child ids and ``(n_children, h)``."""
    ids, rows = [], []
    for k, a in enumerate(agg_ids):
        children = dataset.hierarchy.children_of[a]
        shares = rho.shares(a, children)
        ids.extend(children)
        rows.append(shares[:, None] * agg_forecasts[k][None, :])
    if not rows:
        return [], np.zeros((0, agg_forecasts.shape[1] if agg_forecasts.ndim == 2 else 0))
    return ids, np.concatenate(rows, axis=0)


# -- distribution parameters ---------------------------------------------------


@dataclass
class DistributionParams:
    """Per-step predictive distribution of one series.

    For ``dist == NEGBIN`` steps with ``fallback[t]`` set are Poisson with
    ``lam[t]``; the others are negative binomial with ``r[t], p[t]``.
    """

    series_id: str
    dist: Dist
    mean: np.ndarray
    variance: float | None = None
    r: np.ndarray | None = None
    p: np.ndarray | None = None
    fallback: np.ndarray | None = None

    @property
    def lam(self) -> np.ndarray:
        return self.mean

    @property
    def h(self) -> int:
        return self.mean.size

    def is_poisson(self) -> np.ndarray:
        if self.dist is Dist.POISSON:
            return np.ones(self.h, dtype=bool)
        return self.fallback


def in_sample_variance(history, n_train: int | None = None, window: int | None = None) -> float:
    """Sample variance (ddof=1) of the training values, optionally of the last ``window`` days."""
    v = np.asarray(getattr(history, "values", history), dtype=np.float64)
    if n_train is not None:
        v = v[:n_train]
    if window is not None:
        if window < 2:
            raise ValueError("variance window must be >= 2")
        v = v[-window:]
    return float(v.var(ddof=1)) if v.size > 1 else 0.0


def _nb_moments(mean: np.ndarray, var, p_override=None):
    """``(r, p, fallback)`` by method of moments; fallback wherever ``(r, p)`` is not a valid NB.

    Besides the stated rules (no over-dispersion, zero mean) this also
    catches underflow, e.g. a subnormal mean giving ``p == 0`` or ``r == 0``.
    """
    with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
        if p_override is not None:
            p = np.broadcast_to(np.asarray(p_override, dtype=np.float64), mean.shape).copy()
            fallback = mean <= 0
        else:
            fallback = (mean <= 0) | (var <= mean)
            p = mean / var
        r = mean * p / (1.0 - p)
        fallback = fallback | ~(p > 0) | ~(p < 1) | ~(r > 0) | ~np.isfinite(r)
        p = np.where(fallback, np.nan, p)
        r = np.where(fallback, np.nan, r)
    return r, p, fallback


def estimate_params(
    point,
    history,
    dist: Dist | str = Dist.POISSON,
    variance_window: int | None = None,
    n_train: int | None = None,
    p_override=None,
) -> DistributionParams:
    """Method-of-moments predictive distribution around point forecasts.

    Poisson uses the point forecast as the rate.  The negative binomial takes
    the sample variance ``V`` of the training history (or of its trailing
    ``variance_window`` days) and sets ``p = y_hat / V`` and
    ``r = y_hat p / (1 - p)``.  Steps with ``V <= y_hat`` or ``y_hat == 0``
    fall back to Poisson with the same mean and are flagged.

    ``p_override`` replaces the per-step ``p`` (e.g. the parent's ``p`` when
    sharing it across the hierarchy); ``r`` then follows from the mean.
    """
    dist = Dist(dist)
    sid = getattr(point, "series_id", getattr(history, "id", "series"))
    mean = np.asarray(getattr(point, "values", point), dtype=np.float64).copy()
    if np.any(mean < 0):
        raise NumericalError(f"negative point forecast for {sid!r}; forecasts must be clamped upstream")
    if not np.all(np.isfinite(mean)):
        raise NumericalError(f"non-finite point forecast for {sid!r}")
    if dist is Dist.POISSON:
        return DistributionParams(sid, dist, mean)
    var = in_sample_variance(history, n_train, variance_window)
    r, p, fallback = _nb_moments(mean, var, p_override)
    return DistributionParams(sid, dist, mean, var, r, p, fallback)


def quantiles(params: DistributionParams, levels=RETAIL_LEVELS) -> np.ndarray:
    """Integer quantile forecasts, shape ``(h, len(levels))``."""
    levels = np.asarray(levels, dtype=np.float64)
    if np.any(np.diff(levels) < 0):
        raise ValueError("quantile levels must be sorted")
    out = np.empty((params.h, levels.size), dtype=np.int64)
    pois = params.is_poisson()
    if pois.any():
        out[pois] = poisson_ppf(params.mean[pois], levels)
    if (~pois).any():
        out[~pois] = nbinom_ppf(params.r[~pois], params.p[~pois], levels)
    return out


def quantiles_matrix(
    means: np.ndarray,
    histories: np.ndarray,
    dist: Dist | str,
    levels,
    variance_window: int | None = None,
    p_override: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    """Vectorised parameter estimation and quantiles for ``(n, h)`` means.

    ``histories`` holds the training values ``(n, n_train)``.  Returns
    ``(n, h, len(levels))`` quantiles and a dict of the estimated parameters.
    ``p_override`` (``(n, h)``, NaN where unavailable) replaces the
    moment-based ``p`` for the negative binomial, as when children reuse
    their parent's ``p``.
    """
    dist = Dist(dist)
    means = np.asarray(means, dtype=np.float64)
    if np.any(means < 0) or not np.all(np.isfinite(means)):
        raise NumericalError("point forecasts must be finite and >= 0")
    levels = np.asarray(levels, dtype=np.float64)
    if dist is Dist.POISSON:
        q = poisson_ppf(means, levels)
        return q, {"mean": means, "variance": None, "r": None, "p": None, "fallback": np.ones(means.shape, bool)}
    hist = np.asarray(histories, dtype=np.float64)
    if variance_window is not None:
        hist = hist[:, -variance_window:]
    var = hist.var(axis=1, ddof=1) if hist.shape[1] > 1 else np.zeros(hist.shape[0])
    r, p, fallback = _nb_moments(means, var[:, None], p_override)
    q = np.empty(means.shape + (levels.size,), dtype=np.int64)
    if fallback.any():
        q[fallback] = poisson_ppf(means[fallback], levels)
    if (~fallback).any():
        q[~fallback] = nbinom_ppf(r[~fallback], p[~fallback], levels)
    return q, {"mean": means, "variance": var, "r": r, "p": p, "fallback": fallback}


def in_sample_quantiles(history, levels, h: int, n_train: int | None = None) -> np.ndarray:
    """Empirical (inverse-ECDF) quantiles of the training values, repeated over ``h`` steps.

    Returns shape ``(h, len(levels))``.
    """
    v = np.asarray(getattr(history, "values", history), dtype=np.float64)
    if n_train is not None:
        v = v[:n_train]
    if v.size < 1:
        raise ValueError("need at least one training observation")
    q = empirical_quantiles(v[None, :], levels)[0]
    return np.tile(q, (h, 1))


def empirical_quantiles(values: np.ndarray, levels) -> np.ndarray:
    """Smallest observed value whose ECDF reaches ``u``, row-wise; shape ``(n, len(levels))``."""
    levels = np.asarray(levels, dtype=np.float64)
    s = np.sort(np.asarray(values, dtype=np.float64), axis=1)
    n = s.shape[1]
    k = np.clip(np.ceil(levels * n - 1e-9).astype(np.int64) - 1, 0, n - 1)
    return s[:, k].astype(np.int64)


# -- output files ------------------------------------------------------------


def write_quantiles_csv(path, ids: Sequence[str], q: np.ndarray, levels) -> None:
    """``series_id,step,u,quantile`` rows; ``q`` has shape ``(n, h, n_levels)``."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("series_id", "step", "u", "quantile"))
        for sid, block in zip(ids, q):
            for t, row in enumerate(block, start=1):
                for u, val in zip(levels, row):
                    w.writerow((sid, t, repr(float(u)), int(val)))


def write_params_csv(path, ids: Sequence[str], dist: Dist | str, params: Mapping) -> None:
    """``series_id,step,dist,lambda_or_r,p,variance,fallback`` rows."""
    dist = Dist(dist)
    mean = params["mean"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("series_id", "step", "dist", "lambda_or_r", "p", "variance", "fallback"))
        for i, sid in enumerate(ids):
            var = "" if params["variance"] is None else repr(float(params["variance"][i]))
            for t in range(mean.shape[1]):
                if dist is Dist.POISSON:
                    w.writerow((sid, t + 1, "poisson", repr(float(mean[i, t])), "", "", 0))
                elif params["fallback"][i, t]:
                    w.writerow((sid, t + 1, "poisson", repr(float(mean[i, t])), "", var, 1))
                else:
                    w.writerow(
                        (sid, t + 1, "negbin", repr(float(params["r"][i, t])), repr(float(params["p"][i, t])), var, 0)
                    )


def read_quantiles_csv(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Inverse of :func:`write_quantiles_csv`: ``(ids, levels, q)`` with ``q`` of shape ``(n, h, U)``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["series_id", "step", "u", "quantile"]:
            raise ValueError(f"{path}: expected header series_id,step,u,quantile")
        rows = [(sid, int(step), float(u), float(q)) for sid, step, u, q in reader]
    if not rows:
        raise ValueError(f"{path}: no quantile rows")
    ids = sorted({r[0] for r in rows})
    levels = np.array(sorted({r[2] for r in rows}))
    h = max(r[1] for r in rows)
    pos = {s: k for k, s in enumerate(ids)}
    lev = {u: k for k, u in enumerate(levels)}
    q = np.full((len(ids), h, levels.size), np.nan)
    for sid, step, u, val in rows:
        q[pos[sid], step - 1, lev[u]] = val
    if np.isnan(q).any():
        raise ValueError(f"{path}: quantile grid has gaps")
    return ids, levels, q
