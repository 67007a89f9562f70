"""Sales series data model, CSV ingestion and two-level hierarchy construction.

All series of a :class:`Dataset` live on one daily calendar grid.  Values are
non-negative integer counts stored as ``int64`` arrays; aggregation is exact
integer arithmetic.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LONG_HEADER = ("series_id", "date", "quantity")
HIERARCHY_HEADER = ("lower_id", "aggregate_id")


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class SalesSeries:
    """One daily sales series.

    Parameters
    ----------
    id : str
        Opaque series key.
    start_date : datetime.date
        Calendar date of ``values[0]``.
    values : ndarray of int64
        Daily unit sales, all ``>= 0``.
    """

    id: str
    start_date: dt.date
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 1:
            raise DataError(f"series {self.id!r}: values must be 1-d")
        if vals.size and not np.issubdtype(vals.dtype, np.integer):
            if not np.all(np.isfinite(vals)) or np.any(vals != np.round(vals)):
                raise DataError(f"series {self.id!r}: values must be integer counts")
        vals = vals.astype(np.int64, copy=True)
        if np.any(vals < 0):
            raise DataError(f"series {self.id!r}: negative sales value")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, SalesSeries):
            return NotImplemented
        return (
            self.id == other.id
            and self.start_date == other.start_date
            and np.array_equal(self.values, other.values)
        )

    @property
    def first_nonzero_index(self) -> int | None:
        nz = np.flatnonzero(self.values)
        return int(nz[0]) if nz.size else None

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=k) for k in range(len(self))]

    def head(self, n: int) -> "SalesSeries":
        return SalesSeries(self.id, self.start_date, self.values[:n])


@dataclass(frozen=True)
class HierarchyMap:
    """Many-to-one mapping from lower-level ids to aggregate ids."""

    parent_of: Mapping[str, str]
    children_of: Mapping[str, tuple[str, ...]]

    @classmethod
    def from_parent_map(cls, parent_of: Mapping[str, str]) -> "HierarchyMap":
        children = defaultdict(list)
        for child in sorted(parent_of):
            children[parent_of[child]].append(child)
        return cls(
            parent_of=dict(parent_of),
            children_of={k: tuple(v) for k, v in sorted(children.items())},
        )

    def n_children(self, aggregate_id: str) -> int:
        return len(self.children_of[aggregate_id])


@dataclass(frozen=True)
class Dataset:
    """Two-level dataset on a common calendar grid.

    ``n_train`` is the number of training observations per series, so the last
    training index is ``n_train - 1``.  When test data is attached the series
    extend to ``n_train + horizon``.
    """

    lower: tuple[SalesSeries, ...]
    aggregate: tuple[SalesSeries, ...]
    hierarchy: HierarchyMap
    horizon: int
    n_train: int
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        lengths = {len(s) for s in self.lower} | {len(s) for s in self.aggregate}
        if len(lengths) > 1:
            raise DataError(f"series lengths differ: {sorted(lengths)}")
        starts = {s.start_date for s in self.lower} | {s.start_date for s in self.aggregate}
        if len(starts) > 1:
            raise DataError("series do not share a common start date")
        if self.horizon < 1:
            raise DataError("horizon must be >= 1")
        if self.n_train < 1:
            raise DataError("n_train must be >= 1")
        if lengths and self.n_train > lengths.pop():
            raise DataError("n_train exceeds series length")
        self._index["lower"] = {s.id: k for k, s in enumerate(self.lower)}
        self._index["aggregate"] = {s.id: k for k, s in enumerate(self.aggregate)}

    @property
    def length(self) -> int:
        series = self.lower or self.aggregate
        return len(series[0]) if series else 0

    @property
    def has_test(self) -> bool:
        return self.length >= self.n_train + self.horizon

    def level(self, level: str) -> tuple[SalesSeries, ...]:
        if level.upper() == "A":
            return self.aggregate
        if level.upper() == "L":
            return self.lower
        raise ValueError(f"unknown level {level!r}, expected 'A' or 'L'")

    def ids(self, level: str) -> list[str]:
        return [s.id for s in self.level(level)]

    def get(self, series_id: str, level: str | None = None) -> SalesSeries:
        for lvl, key in (("A", "aggregate"), ("L", "lower")):
            if level is not None and level.upper() != lvl:
                continue
            k = self._index[key].get(series_id)
            if k is not None:
                return self.level(lvl)[k]
        raise KeyError(series_id)

    def matrix(self, level: str, ids: Sequence[str] | None = None) -> np.ndarray:
        """Values of a level as an ``(n_series, length)`` int64 array."""
        key = "aggregate" if level.upper() == "A" else "lower"
        series = self.level(level)
        if ids is not None:
            series = [series[self._index[key][i]] for i in ids]
        if not series:
            return np.zeros((0, self.length), dtype=np.int64)
        return np.stack([s.values for s in series])

    def train_matrix(self, level: str, ids: Sequence[str] | None = None) -> np.ndarray:
        return self.matrix(level, ids)[:, : self.n_train]

    def test_matrix(self, level: str, ids: Sequence[str] | None = None) -> np.ndarray:
        if not self.has_test:
            raise DataError("dataset has no test window attached")
        return self.matrix(level, ids)[:, self.n_train : self.n_train + self.horizon]

    def subset(self, aggregate_ids: Iterable[str]) -> "Dataset":
        """Restrict to the given aggregates and their children."""
        keep = sorted(set(aggregate_ids))
        children = [c for a in keep for c in self.hierarchy.children_of[a]]
        parent_of = {c: self.hierarchy.parent_of[c] for c in children}
        return Dataset(
            lower=tuple(self.get(c, "L") for c in sorted(children)),
            aggregate=tuple(self.get(a, "A") for a in keep),
            hierarchy=HierarchyMap.from_parent_map(parent_of),
            horizon=self.horizon,
            n_train=self.n_train,
        )


@dataclass
class IngestOptions:
    """Options for :func:`ingest_long_csv`.

    ``gaps`` is ``"zero"`` (missing grid days are zero sales) or ``"error"``.
    ``start`` / ``end`` pin the calendar grid; by default it spans the
    earliest to the latest date in the file.
    """

    clamp_negatives: bool = False
    gaps: str = "zero"
    round_fractional: bool = False
    start: dt.date | None = None
    end: dt.date | None = None

    @classmethod
    def for_profile(cls, profile: str) -> "IngestOptions":
        if profile == "favorita":
            return cls(clamp_negatives=True, round_fractional=True)
        return cls()


def _parse_quantity(text: str, lineno: int, opts: IngestOptions) -> int:
    try:
        q = float(text)
    except ValueError:
        raise DataError(f"line {lineno}: quantity {text!r} is not a number") from None
    if not math.isfinite(q):
        raise DataError(f"line {lineno}: quantity {text!r} is not finite")
    if q != round(q):
        if not opts.round_fractional:
            raise DataError(f"line {lineno}: quantity {text!r} is not an integer count")
        q = round(q)
    if q < 0:
        if not opts.clamp_negatives:
            raise DataError(f"line {lineno}: negative quantity {text!r}")
        q = 0
    return int(q)


def ingest_long_csv(path, opts: IngestOptions | None = None) -> list[SalesSeries]:
    """Read a ``series_id,date,quantity`` CSV into dense daily series.

    Returns one series per id, sorted by id, all on the same calendar grid.
    """
    opts = opts or IngestOptions()
    if opts.gaps not in ("zero", "error"):
        raise ValueError(f"unknown gap policy {opts.gaps!r}")
    path = Path(path)
    records: dict[str, dict[dt.date, int]] = defaultdict(dict)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if tuple(h.strip() for h in header) != LONG_HEADER:
            raise DataError(f"{path}: line 1: expected header {','.join(LONG_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            sid, date_text, qty_text = (c.strip() for c in row)
            if not sid:
                raise DataError(f"{path}: line {lineno}: empty series_id")
            try:
                date = dt.date.fromisoformat(date_text)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: bad date {date_text!r}") from None
            if date in records[sid]:
                raise DataError(f"{path}: line {lineno}: duplicate key ({sid}, {date})")
            records[sid][date] = _parse_quantity(qty_text, lineno, opts)
    if not records:
        raise DataError(f"{path}: no data rows")

    all_dates = [d for rec in records.values() for d in rec]
    start = opts.start or min(all_dates)
    end = opts.end or max(all_dates)
    n_days = (end - start).days + 1
    if n_days < 1:
        raise DataError("calendar grid is empty")
    out = []
    for sid in sorted(records):
        vals = np.zeros(n_days, dtype=np.int64)
        seen = np.zeros(n_days, dtype=bool)
        for date, q in records[sid].items():
            k = (date - start).days
            if 0 <= k < n_days:
                vals[k] = q
                seen[k] = True
        if opts.gaps == "error" and not seen.all():
            missing = start + dt.timedelta(days=int(np.argmin(seen)))
            raise DataError(f"series {sid!r}: missing date {missing}")
        out.append(SalesSeries(sid, start, vals))
    return out


def write_long_csv(series: Iterable[SalesSeries], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LONG_HEADER)
        for s in series:
            for date, v in zip(s.dates, s.values):
                writer.writerow((s.id, date.isoformat(), int(v)))


def read_hierarchy_csv(path) -> dict[str, str]:
    """Read a ``lower_id,aggregate_id`` mapping file."""
    parent_of = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HIERARCHY_HEADER:
            raise DataError(f"{path}: expected header {','.join(HIERARCHY_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}: line {lineno}: expected 2 fields")
            lower, agg = row[0].strip(), row[1].strip()
            if lower in parent_of and parent_of[lower] != agg:
                raise DataError(f"{path}: line {lineno}: {lower!r} has two parents")
            parent_of[lower] = agg
    return parent_of


def write_hierarchy_csv(parent_of: Mapping[str, str], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HIERARCHY_HEADER)
        for lower in sorted(parent_of):
            writer.writerow((lower, parent_of[lower]))


def build_aggregates(
    lower: Sequence[SalesSeries], parent_of: Mapping[str, str]
) -> tuple[list[SalesSeries], HierarchyMap]:
    """Sum lower-level series into their aggregates.

    Every lower series must appear in ``parent_of``; mapping entries without a
    matching series are ignored.
    """
    by_id = {s.id: s for s in lower}
    for s in lower:
        if s.id not in parent_of:
            raise DataError(f"lower series {s.id!r} missing from hierarchy map")
    if {len(s) for s in lower} and len({len(s) for s in lower}) > 1:
        raise DataError("lower series lengths differ")
    hierarchy = HierarchyMap.from_parent_map({k: parent_of[k] for k in by_id})
    aggregates = []
    for agg_id, children in hierarchy.children_of.items():
        stack = np.stack([by_id[c].values for c in children])
        aggregates.append(
            SalesSeries(agg_id, by_id[children[0]].start_date, stack.sum(axis=0, dtype=np.int64))
        )
    return aggregates, hierarchy


def make_dataset(
    lower: Sequence[SalesSeries],
    parent_of: Mapping[str, str],
    horizon: int,
    n_train: int | None = None,
) -> Dataset:
    """Build aggregates and wrap everything as a :class:`Dataset`.

    When ``n_train`` is omitted the final ``horizon`` days are held out.
    """
    aggregates, hierarchy = build_aggregates(lower, parent_of)
    length = len(lower[0]) if lower else 0
    if n_train is None:
        n_train = length - horizon
    return Dataset(
        lower=tuple(sorted(lower, key=lambda s: s.id)),
        aggregate=tuple(aggregates),
        hierarchy=hierarchy,
        horizon=horizon,
        n_train=n_train,
    )


def read_wide_csv(
    path,
    start_date: dt.date = dt.date(2011, 1, 29),
    id_column: str = "id",
    parent_column: str | None = None,
    filters: Mapping[str, str] | None = None,
) -> tuple[list[SalesSeries], dict[str, str]]:
    """Read an M5-style wide file (``id, ..., d_1, ..., d_N``).

    Returns the series and, when ``parent_column`` is given, the lower-to-
    aggregate map read from that column (e.g. ``item_id`` for the
    item-by-store to item hierarchy).  ``filters`` keeps only rows whose
    columns equal the given values, e.g. ``{"store_id": "CA_1"}``.
    """
    import pandas as pd

    frame = pd.read_csv(path)
    if id_column not in frame.columns:
        raise DataError(f"{path}: missing id column {id_column!r}")
    for col, val in (filters or {}).items():
        frame = frame[frame[col] == val]
    day_cols = [c for c in frame.columns if c.startswith("d_")]
    if not day_cols:
        raise DataError(f"{path}: no d_* columns")
    day_cols.sort(key=lambda c: int(c[2:]))
    offset = int(day_cols[0][2:]) - 1
    start = start_date + dt.timedelta(days=offset)
    values = frame[day_cols].to_numpy()
    if np.any(values < 0):
        raise DataError(f"{path}: negative sales")
    ids = frame[id_column].astype(str).tolist()
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate ids")
    order = np.argsort(ids, kind="stable")
    series = [SalesSeries(ids[k], start, values[k]) for k in order]
    parent_of = {}
    if parent_column is not None:
        parents = frame[parent_column].astype(str).tolist()
        parent_of = {ids[k]: parents[k] for k in range(len(ids))}
    return series, parent_of
