"""Annual moments of the empirical distribution of a daily series.

The first moment is the raw mean; orders k >= 2 are central moments with
population (1/n) normalisation, i.e. plug-in moments of the empirical
distribution.
"""

from __future__ import annotations

import calendar
import csv
import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError

__all__ = [
    "DailySeries",
    "MomentFeatures",
    "FeatureReport",
    "moment",
    "moment_vector",
    "build_features",
    "read_temps_csv",
    "read_features_csv",
    "write_features_csv",
]


@dataclass(frozen=True)
class DailySeries:
    region_id: str
    year: int
    values: tuple[float, ...]

    def __post_init__(self):
        if not 1 <= len(self.values) <= 366:
            raise InputError(
                f"daily series for ({self.region_id}, {self.year}) has {len(self.values)} values"
            )
        if not all(math.isfinite(v) for v in self.values):
            raise InputError(f"non-finite temperature in ({self.region_id}, {self.year})")


@dataclass(frozen=True)
class MomentFeatures:
    region_id: str
    year: int
    m: tuple[float, ...]

    @property
    def K(self) -> int:
        return len(self.m)


def moment(series, k: int) -> float:
    """Raw mean for ``k == 1``, central moment ``(1/n) sum (x - mean)^k`` otherwise.

    `series` may be a :class:`DailySeries` or any 1-d sequence of floats.
    Sums are exactly rounded (``math.fsum``), so the result does not depend
    on the order of the values.
    """
    if k < 1:
        raise ValueError("moment order must be >= 1")
    x = np.asarray(series.values if isinstance(series, DailySeries) else series, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InputError("moment of an empty series")
    n = x.size
    # a constant series has exactly zero dispersion
    mean = float(x[0]) if np.all(x == x[0]) else math.fsum(x) / n
    if k == 1:
        return mean
    return math.fsum((x - mean) ** k) / n


def moment_vector(series, K: int) -> tuple[float, ...]:
    if K < 1:
        raise ValueError("K must be >= 1")
    return tuple(moment(series, k) for k in range(1, K + 1))


@dataclass
class FeatureReport:
    groups: int = 0
    partial_years: list[tuple[str, int, int]] = field(default_factory=list)
    excluded: list[tuple[str, int, int]] = field(default_factory=list)
    min_days: int = 300
    K: int = 2

    def to_dict(self) -> dict:
        return {
            "groups": self.groups,
            "K": self.K,
            "min_days": self.min_days,
            "partial_years": [
                {"region_id": r, "year": y, "days": d} for r, y, d in self.partial_years
            ],
            "excluded": [{"region_id": r, "year": y, "days": d} for r, y, d in self.excluded],
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def build_features(
    daily_rows: Iterable[Mapping], K: int = 2, min_days: int = 300
) -> tuple[list[MomentFeatures], FeatureReport]:
    """Group ``region_id,date,tmean`` records by (region, calendar year) and
    compute K moments per group.

    Groups with fewer than `min_days` values are excluded; groups that are
    kept but shorter than their calendar year are listed as partial years in
    the report. Output is sorted by (region_id, year).
    """
    if K < 1:
        raise InputError("K must be >= 1")
    groups: dict[tuple[str, int], list[tuple[dt.date, float]]] = {}
    for i, row in enumerate(daily_rows, start=2):
        try:
            rid = str(row["region_id"]).strip()
            raw_date, raw_t = row["date"], row["tmean"]
        except KeyError as exc:
            raise InputError(f"malformed row at line {i}: missing {exc}") from None
        try:
            day = dt.date.fromisoformat(str(raw_date).strip())
        except ValueError:
            raise InputError(f"malformed date at line {i}: {raw_date!r}") from None
        try:
            t = float(raw_t)
        except (TypeError, ValueError):
            raise InputError(f"malformed temperature at line {i}: {raw_t!r}") from None
        if not math.isfinite(t):
            raise InputError(f"non-finite temperature at line {i}")
        groups.setdefault((rid, day.year), []).append((day, t))

    report = FeatureReport(min_days=min_days, K=K)
    features = []
    for (rid, year) in sorted(groups):
        days = sorted(groups[(rid, year)])
        dates = [d for d, _ in days]
        if len(set(dates)) != len(dates):
            raise InputError(f"duplicate date in ({rid}, {year})")
        n_days = len(days)
        if n_days < min_days:
            report.excluded.append((rid, year, n_days))
            continue
        if n_days < (366 if calendar.isleap(year) else 365):
            report.partial_years.append((rid, year, n_days))
        series = DailySeries(rid, year, tuple(t for _, t in days))
        features.append(MomentFeatures(rid, year, moment_vector(series, K)))
    report.groups = len(features)
    return features, report


def read_temps_csv(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing input: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("region_id", "date", "tmean") if c not in (reader.fieldnames or [])]
        if missing:
            raise InputError(f"{path.name}: header lacks columns {missing}")
        return list(reader)


def write_features_csv(features: Sequence[MomentFeatures], path) -> None:
    if not features:
        raise InputError("no feature rows to write")
    K = features[0].K
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "year"] + [f"m{k}" for k in range(1, K + 1)])
        for f in features:
            w.writerow([f.region_id, f.year] + [repr(v) for v in f.m])


def read_features_csv(path) -> list[MomentFeatures]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing input: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["region_id", "year"] or len(header) < 3:
            raise InputError(f"{path.name}: expected header region_id,year,m1,...")
        K = len(header) - 2
        if header[2:] != [f"m{k}" for k in range(1, K + 1)]:
            raise InputError(f"{path.name}: moment columns must be m1..mK")
        out = []
        for i, row in enumerate(reader, start=2):
            if len(row) != K + 2:
                raise InputError(f"{path.name}: malformed row at line {i}")
            try:
                m = tuple(float(v) for v in row[2:])
                out.append(MomentFeatures(row[0], int(row[1]), m))
            except ValueError:
                raise InputError(f"{path.name}: malformed row at line {i}") from None
            if not all(math.isfinite(v) for v in m):
                raise InputError(f"{path.name}: non-finite moment at line {i}")
    return out
