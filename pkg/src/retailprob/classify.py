"""ADI / CV^2 demand classification into smooth, erratic, lumpy and intermittent."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .series import Dataset, SalesSeries

ADI_THRESHOLD = 1.32
CV2_THRESHOLD = 0.49


class Unclassifiable(ValueError):
    pass


class DemandClass(str, enum.Enum):
    SMOOTH = "smooth"
    ERRATIC = "erratic"
    LUMPY = "lumpy"
    INTERMITTENT = "intermittent"

    def __str__(self):
        return self.value

    @classmethod
    def parse(cls, text: str) -> "DemandClass":
        return cls(text.strip().lower())


@dataclass(frozen=True)
class DemandProfile:
    adi: float
    cv2: float
    demand_class: DemandClass


def assign_class(
    adi: float, cv2: float, adi_threshold: float = ADI_THRESHOLD, cv2_threshold: float = CV2_THRESHOLD
) -> DemandClass:
    """Quadrant of the (ADI, CV^2) plane; values on a threshold go to the upper side."""
    sparse = adi >= adi_threshold
    variable = cv2 >= cv2_threshold
    if sparse:
        return DemandClass.LUMPY if variable else DemandClass.INTERMITTENT
    return DemandClass.ERRATIC if variable else DemandClass.SMOOTH


def demand_stats(
    series,
    n_train: int | None = None,
    adi_threshold: float = ADI_THRESHOLD,
    cv2_threshold: float = CV2_THRESHOLD,
    cv2_on: str = "all",
) -> DemandProfile:
    """Compute ADI, CV^2 and the demand class of one series.

    Statistics use the training span from the first positive sale through
    index ``n_train - 1``.  ADI is the number of available days divided by the
    number of days with a sale.  CV^2 uses the sample (ddof=1) standard
    deviation of daily sales; ``cv2_on="nonzero"`` restricts it to the days
    with a sale.  A span of a single day has CV^2 = 0.

    Parameters
    ----------
    series : SalesSeries or array_like
    n_train : int, optional
        Number of training observations; defaults to the whole series.
    """
    values = series.values if isinstance(series, SalesSeries) else np.asarray(series)
    if n_train is None:
        n_train = values.size
    values = values[:n_train]
    nz = np.flatnonzero(values > 0)
    if nz.size == 0:
        raise Unclassifiable("unclassifiable: no sales")
    span = values[nz[0] :].astype(np.float64)
    adi = span.size / nz.size
    if cv2_on == "all":
        sample = span
    elif cv2_on == "nonzero":
        sample = span[span > 0]
    else:
        raise ValueError(f"unknown cv2_on {cv2_on!r}")
    if sample.size < 2:
        cv2 = 0.0
    else:
        cv2 = float((sample.std(ddof=1) / sample.mean()) ** 2)
    return DemandProfile(adi, cv2, assign_class(adi, cv2, adi_threshold, cv2_threshold))


@dataclass
class ClassPartition:
    """Series ids grouped by demand class, plus ids that could not be classified."""

    groups: dict[DemandClass, list[str]]
    excluded: list[str] = field(default_factory=list)
    profiles: dict[str, DemandProfile] = field(default_factory=dict)

    def __getitem__(self, cls: DemandClass) -> list[str]:
        return self.groups[DemandClass(cls)]

    @property
    def sizes(self) -> dict[DemandClass, int]:
        return {k: len(v) for k, v in self.groups.items()}

    @property
    def total(self) -> int:
        return sum(self.sizes.values()) + len(self.excluded)

    def proportions(self) -> dict[DemandClass, float]:
        n = sum(self.sizes.values())
        return {k: (len(v) / n if n else 0.0) for k, v in self.groups.items()}


def classify_level(dataset: Dataset, level: str, **kwargs) -> ClassPartition:
    groups: dict[DemandClass, list[str]] = {c: [] for c in DemandClass}
    part = ClassPartition(groups)
    for s in dataset.level(level):
        try:
            prof = demand_stats(s, dataset.n_train, **kwargs)
        except Unclassifiable:
            part.excluded.append(s.id)
            continue
        part.profiles[s.id] = prof
        groups[prof.demand_class].append(s.id)
    return part


def partition_by_class(dataset: Dataset, level: str, **kwargs) -> ClassPartition:
    """Partition the lower-level series by demand class.

    With ``level="A"`` the aggregates are classified and every lower series
    inherits its parent's class (children of an unclassifiable aggregate are
    excluded).  With ``level="L"`` the lower series are classified directly.
    The returned profiles are those of the classified level.
    """
    if level.upper() == "L":
        return classify_level(dataset, "L", **kwargs)
    if level.upper() != "A":
        raise ValueError(f"unknown level {level!r}")
    agg = classify_level(dataset, "A", **kwargs)
    groups = {c: [] for c in DemandClass}
    excluded = []
    for cls, agg_ids in agg.groups.items():
        for a in agg_ids:
            groups[cls].extend(dataset.hierarchy.children_of[a])
    for a in agg.excluded:
        excluded.extend(dataset.hierarchy.children_of[a])
    for cls in groups:
        groups[cls].sort()
    return ClassPartition(groups, sorted(excluded), agg.profiles)


def write_demand_classes(rows, path) -> None:
    """Write ``series_id,level,adi,cv2,class`` rows.

    ``rows`` is an iterable of ``(series_id, level, DemandProfile)``.
    """
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("series_id", "level", "adi", "cv2", "class"))
        for sid, level, prof in rows:
            writer.writerow((sid, level, repr(prof.adi), repr(prof.cv2), prof.demand_class.value))
