"""Seeded synthetic sales generators used by the demos, tests and benchmarks."""

from __future__ import annotations

import csv
import datetime as dt
from pathlib import Path

import numpy as np

from .series import Dataset, SalesSeries, make_dataset

M5_START = dt.date(2011, 1, 29)
WEEKLY = np.array([1.0, 0.9, 0.85, 0.9, 1.05, 1.3, 1.25])


def _dataset_from_matrix(values: np.ndarray, parents: list[str], horizon: int, prefix: str = "L") -> Dataset:
    lower = []
    parent_of = {}
    for i, row in enumerate(values):
        sid = f"{prefix}{i:05d}"
        lower.append(SalesSeries(sid, M5_START, row.astype(np.int64)))
        parent_of[sid] = parents[i]
    return make_dataset(lower, parent_of, horizon)


def toy_dataset(length: int = 200, horizon: int = 28, seed: int = 0) -> Dataset:
    """Two aggregates with two children each, Poisson sales of different intensity."""
    rng = np.random.default_rng(seed)
    rates = np.array([0.4, 1.5, 3.0, 0.8])
    values = rng.poisson(rates[:, None] * np.ones(length))
    return _dataset_from_matrix(values, ["A0", "A0", "A1", "A1"], horizon)


def poisson_rates(n_agg: int, n_children: int, length: int, seed: int = 0, weekly: bool = True) -> np.ndarray:
    """Known child rates ``(n_agg * n_children, length)``: a per-child level times a weekly profile."""
    rng = np.random.default_rng(seed)
    level = rng.gamma(shape=1.5, scale=1.0, size=n_agg * n_children)
    profile = WEEKLY[np.arange(length) % 7] if weekly else np.ones(length)
    return level[:, None] * profile[None, :]


def poisson_benchmark(
    n_agg: int = 50,
    n_children: int = 5,
    length: int = 758,
    horizon: int = 28,
    seed: int = 0,
) -> tuple[Dataset, np.ndarray]:
    """Hierarchy sampled from known Poisson rates; returns ``(dataset, rates)``."""
    rates = poisson_rates(n_agg, n_children, length, seed)
    rng = np.random.default_rng(seed + 1)
    values = rng.poisson(rates)
    parents = [f"A{j:04d}" for j in range(n_agg) for _ in range(n_children)]
    return _dataset_from_matrix(values, parents, horizon), rates


def lumpy_values(n_series: int, length: int, seed: int = 0) -> np.ndarray:
    """Sparse bursty counts with persistent occurrences.

    Occurrence follows a two-state Markov chain per series: a sale happens
    with probability ``b`` after a quiet day and ``b + 0.25`` after a sale day,
    ``b ~ U(0.1, 0.3)``.  Sizes are ``1 + NegBin(1, 0.25)`` (mean 4), which
    puts almost every series in the lumpy quadrant.
    """
    rng = np.random.default_rng(seed)
    b = rng.uniform(0.1, 0.3, size=n_series)
    out = np.zeros((n_series, length), dtype=np.int64)
    prev = np.zeros(n_series, dtype=bool)
    for t in range(length):
        occur = rng.random(n_series) < np.where(prev, b + 0.25, b)
        size = 1 + rng.negative_binomial(1, 0.25, size=n_series)
        out[:, t] = np.where(occur, size, 0)
        prev = occur
    return out


def lumpy_dataset(n_series: int = 5000, length: int = 228, horizon: int = 28, seed: int = 0) -> Dataset:
    """Lumpy lower-level population, every series its own aggregate."""
    values = lumpy_values(n_series, length, seed)
    parents = [f"A{i:05d}" for i in range(n_series)]
    return _dataset_from_matrix(values, parents, horizon)


def write_m5_surrogate(
    path,
    n_items: int = 3049,
    n_stores: int = 1,
    n_days: int = 1941,
    seed: int = 0,
) -> Path:
    """Write an M5-layout wide sales file (``id,item_id,dept_id,cat_id,store_id,state_id,d_1..``).

    Item demand mixes smooth and intermittent items with a weekly cycle, so
    the file exercises the same code paths as the public competition data.
    """
    rng = np.random.default_rng(seed)
    path = Path(path)
    depts = ["FOODS_1", "FOODS_2", "FOODS_3", "HOBBIES_1", "HOBBIES_2", "HOUSEHOLD_1", "HOUSEHOLD_2"]
    stores = [f"CA_{k + 1}" for k in range(n_stores)]
    level = rng.lognormal(mean=-0.5, sigma=1.2, size=n_items)
    launch = np.where(rng.random(n_items) < 0.3, rng.integers(0, n_days // 2, n_items), 0)
    profile = WEEKLY[np.arange(n_days) % 7]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "item_id", "dept_id", "cat_id", "store_id", "state_id"] + [f"d_{d + 1}" for d in range(n_days)])
        for store in stores:
            scale = rng.uniform(0.6, 1.4)
            for i in range(n_items):
                dept = depts[i % len(depts)]
                item = f"{dept}_{i:04d}"
                lam = level[i] * scale * profile
                row = rng.poisson(lam)
                row[: launch[i]] = 0
                w.writerow([f"{item}_{store}_evaluation", item, dept, dept.split("_")[0], store, "CA"] + row.tolist())
    return path
