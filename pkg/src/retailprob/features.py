"""Lag embedding for global models and the recursive multi-step forecast driver."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

DEFAULT_LAGS = 100


class NumericalError(ArithmeticError):
    """A model or estimator produced a non-finite or otherwise unusable value."""


class PadPolicy(str, enum.Enum):
    ZERO = "zero"
    DROP = "drop"


@dataclass
class LagMatrix:
    """Pooled lag-embedded training rows.

    ``X[k]`` holds ``(y[t-1], ..., y[t-p])`` of series ``series_index[k]`` and
    ``y[k]`` the target ``y[t]`` with ``t = target_time[k]``.
    """

    X: np.ndarray
    y: np.ndarray
    series_index: np.ndarray
    target_time: np.ndarray
    series_ids: list[str]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.y.size

    def rows_of(self, series_positions) -> "LagMatrix":
        mask = np.isin(self.series_index, np.asarray(series_positions))
        return LagMatrix(
            self.X[mask], self.y[mask], self.series_index[mask], self.target_time[mask], self.series_ids
        )

    def save(self, path) -> None:
        """Dump ``[X | y]`` as a row-major float64 file plus a ``.schema`` sidecar."""
        data = np.column_stack([self.X, self.y]).astype("<f8")
        data.tofile(path)
        with open(f"{path}.schema", "w", encoding="utf-8") as fh:
            fh.write("dtype=<f8\norder=C\n")
            fh.write(f"rows={data.shape[0]}\ncols={data.shape[1]}\n")
            fh.write("columns=" + ",".join([f"lag_{k + 1}" for k in range(self.p)] + ["target"]) + "\n")


def _as_2d(histories) -> np.ndarray:
    if isinstance(histories, np.ndarray) and histories.ndim == 2:
        return histories.astype(np.float64, copy=False)
    rows = [np.asarray(getattr(h, "values", h), dtype=np.float64) for h in histories]
    if len({r.size for r in rows}) > 1:
        raise ValueError("histories must share one length; use embed per series otherwise")
    return np.stack(rows) if rows else np.zeros((0, 0))


def _check_lags(n_lags: int) -> None:
    if n_lags < 1:
        raise ValueError(f"n_lags must be >= 1, got {n_lags}")


def iter_lag_blocks(
    values: np.ndarray,
    n_train: int | None = None,
    n_lags: int = DEFAULT_LAGS,
    pad: PadPolicy = PadPolicy.ZERO,
    target_offset: int = 0,
    max_rows: int = 200_000,
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Yield ``(X, y, series_index, target_time)`` blocks of at most ``max_rows`` rows.

    ``values`` is ``(n_series, length)``; only the first ``n_train`` columns
    are used.  ``target_offset = k - 1`` pairs the window ending at ``t - 1``
    with the target ``y[t + k - 1]`` (direct ``k``-step models).  Blocks are
    built from a strided view of the padded series, so the full pooled
    design matrix never has to exist at once.
    """
    _check_lags(n_lags)
    pad = PadPolicy(pad)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("values must be (n_series, length)")
    if n_train is None:
        n_train = values.shape[1]
    values = values[:, :n_train]
    n_series, length = values.shape
    padded = np.concatenate([np.zeros((n_series, n_lags)), values], axis=1)
    # windows[i, s] = padded[i, s : s + n_lags + 1], the last entry is y[s]
    windows = sliding_window_view(padded, n_lags + 1, axis=1)
    first_t = 0 if pad is PadPolicy.ZERO else n_lags
    last_t = length - 1 - target_offset
    if last_t < first_t:
        if pad is PadPolicy.DROP and n_series:
            logger.warning("all series shorter than %d lags; no rows", n_lags + target_offset + 1)
        return
    times = np.arange(first_t, last_t + 1)
    per_series = times.size
    chunk = max(1, max_rows // per_series)
    for start in range(0, n_series, chunk):
        stop = min(n_series, start + chunk)
        # features for target t come from the window ending at y[t-1]
        win = windows[start:stop, times]  # (m, T, p+1), window s ends at y[s]
        X = win[:, :, :n_lags][:, :, ::-1].reshape(-1, n_lags)
        if target_offset:
            y = values[start:stop, times + target_offset].reshape(-1)
        else:
            y = win[:, :, n_lags].reshape(-1)
        idx = np.repeat(np.arange(start, stop), per_series)
        tt = np.tile(times + target_offset, stop - start)
        yield np.ascontiguousarray(X), y.copy(), idx, tt


def embed(
    histories,
    n_train: int | None = None,
    n_lags: int = DEFAULT_LAGS,
    pad: PadPolicy = PadPolicy.ZERO,
    series_ids: Sequence[str] | None = None,
    target_offset: int = 0,
) -> LagMatrix:
    """Lag-embed and pool series into one training matrix.

    With ``pad="zero"`` lags before the series start are 0 and every training
    time yields a row; with ``pad="drop"`` only fully observed windows do.

    Examples
    --------
    >>> m = embed([[1, 2, 3]], n_lags=2, pad="drop")
    >>> m.X.tolist(), m.y.tolist()
    ([[2.0, 1.0]], [3.0])
    """
    _check_lags(n_lags)
    values = _as_2d(histories)
    if series_ids is None:
        series_ids = [getattr(h, "id", str(k)) for k, h in enumerate(histories)]
    blocks = list(iter_lag_blocks(values, n_train, n_lags, pad, target_offset))
    if not blocks:
        empty = np.zeros((0, n_lags))
        return LagMatrix(empty, np.zeros(0), np.zeros(0, int), np.zeros(0, int), list(series_ids))
    X, y, idx, tt = (np.concatenate(parts) for parts in zip(*blocks))
    return LagMatrix(X, y, idx, tt, list(series_ids))


def last_windows(values: np.ndarray, n_lags: int) -> np.ndarray:
    """Most recent ``n_lags`` values of each row, newest first, zero-padded."""
    values = np.asarray(values, dtype=np.float64)
    n, length = values.shape
    out = np.zeros((n, n_lags))
    k = min(n_lags, length)
    if k:
        out[:, :k] = values[:, ::-1][:, :k]
    return out


def _predict(model, X: np.ndarray) -> np.ndarray:
    fn = getattr(model, "predict", None) or model
    return np.asarray(fn(X), dtype=np.float64).reshape(-1)


@dataclass
class ForecastPath:
    series_id: str
    values: np.ndarray

    @property
    def h(self) -> int:
        return self.values.size


def recursive_forecast_many(
    model,
    histories: np.ndarray,
    h: int,
    n_lags: int = DEFAULT_LAGS,
    series_ids: Sequence[str] | None = None,
) -> np.ndarray:
    """Recursive ``h``-step point forecasts for many series at once.

    Each step feeds the previous (unrounded, clamped at 0) predictions back as
    the newest lag.  Returns an ``(n_series, h)`` array of forecasts ``>= 0``.
    """
    _check_lags(n_lags)
    histories = np.asarray(histories, dtype=np.float64)
    if histories.ndim != 2:
        raise ValueError("histories must be (n_series, length)")
    n = histories.shape[0]
    window = last_windows(histories, n_lags)
    out = np.empty((n, h))
    for step in range(h):
        pred = _predict(model, window)
        if pred.shape != (n,):
            raise ValueError(f"model returned shape {pred.shape}, expected ({n},)")
        bad = ~np.isfinite(pred)
        if bad.any():
            k = int(np.argmax(bad))
            sid = series_ids[k] if series_ids is not None else k
            raise NumericalError(f"non-finite forecast for series {sid!r} at step {step + 1}")
        pred = np.maximum(pred, 0.0)
        out[:, step] = pred
        window = np.concatenate([pred[:, None], window[:, :-1]], axis=1)
    return out


def recursive_forecast(model, series, h: int, n_lags: int = DEFAULT_LAGS) -> ForecastPath:
    """Recursive forecast for a single series (``SalesSeries`` or array)."""
    values = np.asarray(getattr(series, "values", series), dtype=np.float64)
    if values.size < 1:
        raise ValueError("series needs at least one observation")
    sid = getattr(series, "id", "series")
    path = recursive_forecast_many(model, values[None, :], h, n_lags, [sid])
    return ForecastPath(sid, path[0])
