"""Unbalanced region x year panel: ingestion, filtering and marginal averages."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import InputError

__all__ = [
    "RegionMeta",
    "Observation",
    "PanelDataset",
    "FilterReport",
    "MarginalAverages",
    "load_panel",
    "read_panel_csv",
    "write_panel_csv",
    "apply_filters",
    "marginal_averages",
]


@dataclass(frozen=True)
class RegionMeta:
    region_id: str
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise InputError(f"latitude out of range for region {self.region_id!r}: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise InputError(f"longitude out of range for region {self.region_id!r}: {self.longitude}")


@dataclass(frozen=True)
class Observation:
    region_id: str
    year: int
    y: float


@dataclass(frozen=True)
class PanelDataset:
    """Immutable unbalanced panel of growth observations plus region metadata."""

    regions: tuple[RegionMeta, ...]
    observations: tuple[Observation, ...]

    def __post_init__(self):
        ids = [r.region_id for r in self.regions]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate region_id in region metadata")
        known = set(ids)
        seen = set()
        for ob in self.observations:
            if ob.region_id not in known:
                raise InputError(f"unresolvable region_id {ob.region_id!r}")
            key = (ob.region_id, ob.year)
            if key in seen:
                raise InputError(f"duplicate key (region_id={ob.region_id!r}, year={ob.year})")
            seen.add(key)
            if not math.isfinite(ob.y):
                raise InputError(f"non-finite response for {key}")

    @property
    def R(self) -> int:
        return len({ob.region_id for ob in self.observations})

    @property
    def T(self) -> int:
        return len({ob.year for ob in self.observations})

    @property
    def n(self) -> int:
        return len(self.observations)

    def region(self, region_id: str) -> RegionMeta:
        for r in self.regions:
            if r.region_id == region_id:
                return r
        raise KeyError(region_id)

    def values(self) -> dict[tuple[str, int], float]:
        return {(ob.region_id, ob.year): ob.y for ob in self.observations}


@dataclass
class FilterReport:
    rows_in: int
    rows_trimmed: int
    regions_dropped: list[str] = field(default_factory=list)
    rows_dropped_with_regions: int = 0
    R: int = 0
    T: int = 0
    n: int = 0

    def to_dict(self) -> dict:
        return {
            "rows_in": self.rows_in,
            "rows_trimmed": self.rows_trimmed,
            "regions_dropped": len(self.regions_dropped),
            "dropped_region_ids": list(self.regions_dropped),
            "rows_dropped_with_regions": self.rows_dropped_with_regions,
            "R": self.R,
            "T": self.T,
            "n": self.n,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _parse_float(value, what: str, line: int) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise InputError(f"malformed row at line {line}: bad {what} {value!r}") from None


def load_panel(obs_rows: Iterable[Mapping], region_rows: Iterable[Mapping]) -> PanelDataset:
    """Build a validated panel from `gva.csv`-style and `regions.csv`-style records.

    Records are mappings with keys ``region_id, year, growth`` and
    ``region_id, lat, lon`` respectively. Line numbers in error messages count
    the header as line 1.
    """
    regions = []
    for i, row in enumerate(region_rows, start=2):
        try:
            rid = str(row["region_id"]).strip()
            lat, lon = row["lat"], row["lon"]
        except KeyError as exc:
            raise InputError(f"malformed region row at line {i}: missing {exc}") from None
        if not rid:
            raise InputError(f"malformed region row at line {i}: empty region_id")
        regions.append(RegionMeta(rid, _parse_float(lat, "lat", i), _parse_float(lon, "lon", i)))

    observations = []
    for i, row in enumerate(obs_rows, start=2):
        try:
            rid = str(row["region_id"]).strip()
            year_raw, growth = row["year"], row["growth"]
        except KeyError as exc:
            raise InputError(f"malformed row at line {i}: missing {exc}") from None
        try:
            year = int(str(year_raw).strip())
        except ValueError:
            raise InputError(f"malformed row at line {i}: bad year {year_raw!r}") from None
        y = _parse_float(growth, "growth", i)
        if not math.isfinite(y):
            raise InputError(f"non-finite response at line {i}")
        observations.append(Observation(rid, year, y))
    return PanelDataset(tuple(regions), tuple(observations))


def _read_csv(path, required: tuple[str, ...]) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing input: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise InputError(f"{path.name}: header lacks columns {missing}")
        return list(reader)


def read_panel_csv(gva_path, regions_path) -> PanelDataset:
    return load_panel(
        _read_csv(gva_path, ("region_id", "year", "growth")),
        _read_csv(regions_path, ("region_id", "lat", "lon")),
    )


def write_panel_csv(panel: PanelDataset, gva_path, regions_path) -> None:
    # repr() of a float round-trips exactly
    with Path(gva_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "year", "growth"])
        for ob in panel.observations:
            w.writerow([ob.region_id, ob.year, repr(ob.y)])
    with Path(regions_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "lat", "lon"])
        for r in panel.regions:
            w.writerow([r.region_id, repr(r.latitude), repr(r.longitude)])


def apply_filters(
    panel: PanelDataset, max_abs_growth: float = 10.0, min_periods: int = 5
) -> tuple[PanelDataset, FilterReport]:
    """Trim extreme growth rates, then drop regions observed too rarely.

    Observations with ``|y| >= max_abs_growth`` are removed first. Regions
    with fewer than `min_periods` surviving observations are then removed
    entirely (their metadata is kept so coordinates stay resolvable).
    """
    if not max_abs_growth > 0:
        raise ValueError("max_abs_growth must be positive")
    if min_periods < 1:
        raise ValueError("min_periods must be >= 1")

    kept = [ob for ob in panel.observations if abs(ob.y) < max_abs_growth]
    trimmed = panel.n - len(kept)

    counts: dict[str, int] = {}
    for ob in kept:
        counts[ob.region_id] = counts.get(ob.region_id, 0) + 1
    dropped = sorted(r for r, c in counts.items() if c < min_periods)
    dropped_set = set(dropped)
    final = tuple(ob for ob in kept if ob.region_id not in dropped_set)
    if not final:
        raise InputError("empty dataset after filtering")

    out = PanelDataset(panel.regions, final)
    report = FilterReport(
        rows_in=panel.n,
        rows_trimmed=trimmed,
        regions_dropped=dropped,
        rows_dropped_with_regions=len(kept) - len(final),
        R=out.R,
        T=out.T,
        n=out.n,
    )
    return out, report


@dataclass(frozen=True)
class MarginalAverages:
    regions: tuple
    years: tuple
    region_means: np.ndarray
    year_means: np.ndarray
    overall_mean: float
    region_counts: np.ndarray
    year_counts: np.ndarray

    def region_mean(self, region_id) -> float:
        return float(self.region_means[self.regions.index(region_id)])

    def year_mean(self, year) -> float:
        return float(self.year_means[self.years.index(year)])


def marginal_averages(values: Mapping[tuple, float]) -> MarginalAverages:
    """Observed-cell means per region, per year and overall.

    `values` maps ``(region, year)`` to a real number; unobserved cells are
    simply absent and never imputed.
    """
    if not values:
        raise ValueError("at least one observed cell is required")
    keys = list(values)
    regions = tuple(sorted({k[0] for k in keys}))
    years = tuple(sorted({k[1] for k in keys}))
    r_index = {r: i for i, r in enumerate(regions)}
    t_index = {t: i for i, t in enumerate(years)}
    ri = np.array([r_index[k[0]] for k in keys])
    ti = np.array([t_index[k[1]] for k in keys])
    v = np.array([values[k] for k in keys], dtype=float)

    r_cnt = np.bincount(ri, minlength=len(regions))
    t_cnt = np.bincount(ti, minlength=len(years))
    return MarginalAverages(
        regions=regions,
        years=years,
        region_means=np.bincount(ri, weights=v, minlength=len(regions)) / r_cnt,
        year_means=np.bincount(ti, weights=v, minlength=len(years)) / t_cnt,
        overall_mean=float(v.mean()),
        region_counts=r_cnt,
        year_counts=t_cnt,
    )
