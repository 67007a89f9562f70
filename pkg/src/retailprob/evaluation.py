"""Scaled pinball loss, its equal-weight aggregate and mean squared error."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

METRICS_HEADER = ("group", "model", "metric", "value", "n_series", "n_omitted")


def pinball(y, q, u: float) -> np.ndarray:
    """Elementwise pinball loss ``u (y-q)`` if ``y >= q`` else ``(1-u)(q-y)``."""
    y = np.asarray(y, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    d = y - q
    return np.where(d >= 0, u * d, (u - 1.0) * d)


def spl_scale(history) -> float | None:
    """Mean absolute one-step change from the first non-zero sale through the end.

    ``None`` when fewer than two observations remain or every change is zero.
    """
    v = np.asarray(getattr(history, "values", history), dtype=np.float64)
    nz = np.flatnonzero(v)
    if nz.size == 0:
        return None
    span = v[nz[0]:]
    if span.size < 2:
        return None
    d = float(np.abs(np.diff(span)).mean())
    return d if d > 0 else None


def spl(truth, q, history, u: float) -> float | None:
    """Scaled pinball loss of one quantile path, ``None`` when the scale is zero.

    Examples
    --------
    >>> round(spl([2], [5], [0, 1, 3], 0.9), 12)
    0.15
    """
    truth = np.asarray(truth, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if truth.shape != q.shape:
        raise ValueError(f"truth and quantile lengths differ: {truth.shape} vs {q.shape}")
    if truth.size == 0:
        raise ValueError("empty horizon")
    scale = spl_scale(history)
    if scale is None:
        return None
    return float(pinball(truth, q, u).mean() / scale)


@dataclass
class SplReport:
    """Per-series SPL over the quantile levels of one group.

    ``values[i, k]`` is the SPL of series ``i`` at ``levels[k]``; rows of
    invalid series (zero scale) are NaN.  ``weights`` are equal over the
    valid series and zero elsewhere.
    """

    ids: list[str]
    levels: np.ndarray
    values: np.ndarray
    valid: np.ndarray
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        n_valid = int(self.valid.sum())
        self.weights = np.where(self.valid, 1.0 / n_valid if n_valid else 0.0, 0.0)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def n_omitted(self) -> int:
        return int((~self.valid).sum())

    def series_mean(self) -> np.ndarray:
        return self.values.mean(axis=1)

    def wspl(self) -> float:
        return wspl(self)

    def omitted_ids(self) -> list[str]:
        return [s for s, ok in zip(self.ids, self.valid) if not ok]


def spl_report(
    truth: np.ndarray,
    q: np.ndarray,
    histories,
    levels: Sequence[float],
    ids: Sequence[str] | None = None,
) -> SplReport:
    """SPL for many series at once.

    ``truth`` is ``(n, h)``, ``q`` is ``(n, h, len(levels))`` and
    ``histories`` holds each series' values through the forecast origin
    (a 2-d array or a list of 1-d arrays).
    """
    truth = np.asarray(truth, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    levels = np.asarray(levels, dtype=np.float64)
    if truth.ndim != 2 or q.shape != truth.shape + (levels.size,):
        raise ValueError(f"shape mismatch: truth {truth.shape}, quantiles {q.shape}, {levels.size} levels")
    n = truth.shape[0]
    if len(histories) != n:
        raise ValueError(f"{len(histories)} histories for {n} series")
    scale = np.array([spl_scale(hist) or np.nan for hist in histories])
    valid = np.isfinite(scale)
    d = truth[:, :, None] - q
    loss = np.where(d >= 0, levels * d, (levels - 1.0) * d).mean(axis=1)
    values = loss / scale[:, None]
    ids = list(ids) if ids is not None else [str(k) for k in range(n)]
    return SplReport(ids, levels, values, valid)


def wspl(report: SplReport | Sequence[SplReport]) -> float:
    """Equal-weight mean over valid series of each series' mean SPL across levels."""
    reports = [report] if isinstance(report, SplReport) else list(report)
    means = np.concatenate([r.series_mean()[r.valid] for r in reports]) if reports else np.zeros(0)
    if means.size == 0:
        raise ValueError("no valid series to evaluate: every scale is zero")
    return float(means.mean())


def mse(truth, forecast) -> float:
    """Mean over series of the horizon-mean squared error."""
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    forecast = np.atleast_2d(np.asarray(forecast, dtype=np.float64))
    if truth.shape != forecast.shape:
        raise ValueError(f"truth and forecast shapes differ: {truth.shape} vs {forecast.shape}")
    return float(((truth - forecast) ** 2).mean(axis=1).mean())


@dataclass
class MetricRow:
    group: str
    model: str
    metric: str
    value: float
    n_series: int
    n_omitted: int = 0

    def as_tuple(self):
        return (self.group, self.model, self.metric, repr(float(self.value)), self.n_series, self.n_omitted)


def write_metrics_csv(rows: Sequence[MetricRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for row in rows:
            w.writerow(row.as_tuple())


def read_metrics_csv(path) -> list[MetricRow]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ValueError(f"{path}: expected header {','.join(METRICS_HEADER)}")
        return [
            MetricRow(r["group"], r["model"], r["metric"], float(r["value"]), int(r["n_series"]), int(r["n_omitted"]))
            for r in reader
        ]
