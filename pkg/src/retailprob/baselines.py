"""Benchmark forecasters: the naive family with Gaussian intervals and direct quantile boosting."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .features import DEFAULT_LAGS, ForecastPath, PadPolicy, embed, last_windows
from .gbt import PROFILES, GbtModel, GbtParams, LossSpec, fit_gbt
from .gbt.tree import Binner

SEASON = 7


class BaselineKind(str, enum.Enum):
    MEAN = "mean"
    NAIVE = "naive"
    SNAIVE = "snaive"
    DRIFT = "drift"


def _gaussian_quantiles(point: np.ndarray, sd: np.ndarray, levels) -> np.ndarray:
    z = norm.ppf(np.asarray(levels, dtype=np.float64))
    q = point[:, None] + sd[:, None] * z[None, :]
    return np.floor(np.maximum(q, 0.0) + 0.5).astype(np.int64)


def _rms(res: np.ndarray, dof: int) -> float:
    dof = res.size - dof
    return float(np.sqrt(np.sum(res**2) / dof)) if dof > 0 else 0.0


def baseline_forecast(kind, history, h: int, levels, m: int = SEASON) -> tuple[ForecastPath, np.ndarray]:
    """Point path and integer quantiles ``(h, len(levels))`` of a naive-family forecaster.

    Point rules: ``mean`` repeats the training mean, ``naive`` the last value,
    ``snaive`` the value ``m`` steps back (cycling through the last season) and
    ``drift`` extends the line through the first and last observations.
    Intervals are ``point + z_u * sd_h`` with the usual horizon scalings of
    the residual standard deviation:

    ========  ===============================
    mean      ``sd * sqrt(1 + 1/T)``
    naive     ``sd * sqrt(k)``
    snaive    ``sd * sqrt(floor((k-1)/m) + 1)``
    drift     ``sd * sqrt(k (1 + k/(T-1)))``
    ========  ===============================

    Quantiles are floored at zero and rounded to integers.
    """
    kind = BaselineKind(kind)
    sid = getattr(history, "id", "series")
    y = np.asarray(getattr(history, "values", history), dtype=np.float64)
    T = y.size
    if T < 1:
        raise ValueError("baseline needs a non-empty history")
    if h < 1:
        raise ValueError("horizon must be >= 1")
    k = np.arange(1, h + 1, dtype=np.float64)
    if kind is BaselineKind.MEAN:
        point = np.full(h, y.mean())
        sd = _rms(y - y.mean(), 1) * np.sqrt(1 + 1 / T) * np.ones(h)
    elif kind is BaselineKind.NAIVE:
        point = np.full(h, y[-1])
        sd = _rms(np.diff(y), 0) * np.sqrt(k)
    elif kind is BaselineKind.SNAIVE:
        if T < m:
            raise ValueError(f"seasonal naive needs at least {m} observations, got {T}")
        point = y[T - m + (np.arange(h) % m)]
        sd = _rms(y[m:] - y[:-m], 0) * np.sqrt(np.floor((k - 1) / m) + 1)
    else:
        slope = (y[-1] - y[0]) / (T - 1) if T > 1 else 0.0
        point = y[-1] + k * slope
        res = np.diff(y) - slope
        sd = _rms(res, 1) * np.sqrt(k * (1 + k / (T - 1))) if T > 1 else np.zeros(h)
    return ForecastPath(sid, point), _gaussian_quantiles(point, sd, levels)


def baseline_matrix(kind, histories: np.ndarray, h: int, levels, m: int = SEASON):
    """:func:`baseline_forecast` over rows; returns ``(points (n, h), quantiles (n, h, U))``."""
    pairs = [baseline_forecast(kind, row, h, levels, m) for row in np.asarray(histories)]
    if not pairs:
        return np.zeros((0, h)), np.zeros((0, h, len(levels)), dtype=np.int64)
    return np.stack([p.values for p, _ in pairs]), np.stack([q for _, q in pairs])


@dataclass
class DirectQuantileModels:
    """One pinball-loss ensemble per ``(level, step)``; ``models[(u, k)]`` with ``k`` 1-based."""

    levels: tuple[float, ...]
    h: int
    n_lags: int
    models: dict[tuple[float, int], GbtModel] = field(default_factory=dict)

    def predict(self, histories) -> np.ndarray:
        """Quantile forecasts ``(n, h, len(levels))``, sorted across levels."""
        window = last_windows(np.atleast_2d(np.asarray(histories, dtype=np.float64)), self.n_lags)
        out = np.empty((window.shape[0], self.h, len(self.levels)))
        for (u, k), model in self.models.items():
            out[:, k - 1, self.levels.index(u)] = model.predict(window)
        return np.sort(np.maximum(out, 0.0), axis=2)


def direct_quantile_gbt(
    histories,
    levels,
    h: int,
    n_train: int | None = None,
    n_lags: int = DEFAULT_LAGS,
    params: GbtParams | None = None,
    pad: PadPolicy = PadPolicy.ZERO,
    seed: int = 0,
) -> DirectQuantileModels:
    """Fit ``len(levels) * h`` pinball models on horizon-shifted targets.

    The model for step ``k`` maps the window ending at ``t`` to ``y[t + k]``,
    so every step is predicted from the same last observed window.
    """
    params = params or PROFILES["default"]
    levels = tuple(float(u) for u in levels)
    out = DirectQuantileModels(levels, h, n_lags)
    for k in range(1, h + 1):
        mat = embed(histories, n_train, n_lags, pad, target_offset=k - 1)
        if len(mat) == 0:
            raise ValueError(f"no training rows for step {k}")
        binner = Binner(params.max_bins, seed=seed).fit(mat.X)
        binned = (binner, binner.transform(mat.X))
        for u in levels:
            out.models[(u, k)] = fit_gbt(mat, LossSpec.pinball(u), params, seed=seed, binned=binned)
    return out
