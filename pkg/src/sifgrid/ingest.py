"""Preprocessing: sounding tables and static maps to modeling-ready data.

Stages are pure selections/partitions over a columnar sounding array:
quality filtering, ocean masking against the 0.05-degree land cover map,
majority upscaling of land cover to 1 degree, exclusion of non-vegetated
cell classes, and grouping into per-cell per-year datasets.  Every input
record either reaches exactly one dataset or is accounted for in the
rejection counters.

Grid cells follow a half-open south-west-origin convention: cell (i, j)
covers latitudes [i-90, i-89) and longitudes [j-180, j-179).  Longitudes
are wrapped into [-180, 180); latitudes outside [-90, 90) are rejected.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .model import (
    EXCLUDED_LAND_COVER,
    LAND_COVER_CODES,
    QUALITY_BEST,
    QUALITY_GOOD,
    SOUNDING_DTYPE,
    CellYearDataset,
    OverpassDay,
    utc_year_and_day,
)

WATER_BODIES = 17
UNCLASSIFIED = 255

SOUNDING_CSV_COLUMNS = ["latitude", "longitude", "time_epoch_s",
                        "sif_740nm", "sif_variance", "quality_flag"]

XCO2_TIME_COLUMNS = ["cell_lat_index", "cell_lon_index", "year",
                     "day_of_year", "time_epoch_s"]

_GRID_MAGIC = b"sifgrid-grid v1\n"


@dataclass
class RejectionCounters:
    """Where dropped records went; conservation of records demands that
    kept + rejected equals the input count."""

    quality: int = 0
    ocean: int = 0
    out_of_bounds: int = 0
    masked_cell: int = 0
    wrong_year: int = 0

    def total(self) -> int:
        return (self.quality + self.ocean + self.out_of_bounds
                + self.masked_cell + self.wrong_year)

    def as_dict(self) -> dict:
        return dict(quality=self.quality, ocean=self.ocean,
                    out_of_bounds=self.out_of_bounds,
                    masked_cell=self.masked_cell, wrong_year=self.wrong_year)


def write_grid(path, codes: np.ndarray, resolution: float,
               origin: tuple[float, float] = (-90.0, -180.0)) -> None:
    """Write a flat row-major grid file: magic line, one JSON header line
    (resolution, origin, dimensions, dtype), then raw uint8 codes.  Row 0
    is the southernmost row."""
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    header = {"resolution": resolution, "origin_lat": origin[0],
              "origin_lon": origin[1], "nrows": codes.shape[0],
              "ncols": codes.shape[1], "dtype": "u1"}
    with open(path, "wb") as fh:
        fh.write(_GRID_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(codes.tobytes())


def read_grid(path) -> tuple[np.ndarray, float, tuple[float, float]]:
    """Inverse of :func:`write_grid`; returns (codes, resolution, origin)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_GRID_MAGIC))
        if magic != _GRID_MAGIC:
            raise ValueError(f"{path} is not a grid file")
        header = json.loads(fh.readline().decode())
        n = header["nrows"] * header["ncols"]
        raw = fh.read()
    if len(raw) != n:
        raise ValueError(f"{path}: expected {n} codes, found {len(raw)} bytes")
    codes = np.frombuffer(raw, dtype=np.uint8).reshape(header["nrows"],
                                                       header["ncols"]).copy()
    return codes, float(header["resolution"]), (header["origin_lat"],
                                                header["origin_lon"])


@dataclass
class LandCoverMap:
    """Complete global majority land cover grid at 0.05 or 1 degree."""

    resolution: float
    codes: np.ndarray

    def __post_init__(self):
        if self.resolution not in (0.05, 1.0):
            raise ValueError(f"unsupported resolution {self.resolution}")
        shape = (round(180 / self.resolution), round(360 / self.resolution))
        self.codes = np.asarray(self.codes, dtype=np.uint8)
        if self.codes.shape != shape:
            raise ValueError(f"expected shape {shape}, got {self.codes.shape}")
        known = np.zeros(256, dtype=bool)
        known[list(LAND_COVER_CODES)] = True
        bad = ~known[self.codes]
        if bad.any():
            raise ValueError(f"{bad.sum()} pixels carry unknown land cover codes")

    @classmethod
    def read(cls, path) -> "LandCoverMap":
        codes, res, origin = read_grid(path)
        if origin != (-90.0, -180.0):
            raise ValueError(f"land cover grids must have origin (-90, -180), got {origin}")
        return cls(resolution=res, codes=codes)

    def write(self, path) -> None:
        write_grid(path, self.codes, self.resolution)


@dataclass
class BiomeMap:
    """1-degree biome codes 1..15; 0 marks cells without an assignment."""

    codes: np.ndarray

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.uint8)
        if self.codes.shape != (180, 360):
            raise ValueError(f"expected shape (180, 360), got {self.codes.shape}")
        if self.codes.max(initial=0) > 15:
            raise ValueError("biome codes must lie in 0..15")

    @classmethod
    def read(cls, path) -> "BiomeMap":
        codes, res, _ = read_grid(path)
        if res != 1.0:
            raise ValueError("biome map must be a 1-degree grid")
        return cls(codes=codes)

    def write(self, path) -> None:
        write_grid(path, self.codes, 1.0)


def read_soundings(path) -> np.ndarray:
    """Load a sounding table (CSV with the documented header) into the
    columnar layout, deriving fractional day-of-year from time."""
    df = pd.read_csv(path)
    if list(df.columns) != SOUNDING_CSV_COLUMNS:
        raise ValueError(f"{path}: expected columns {SOUNDING_CSV_COLUMNS}, "
                         f"got {list(df.columns)}")
    out = np.empty(len(df), dtype=SOUNDING_DTYPE)
    out["latitude"] = df["latitude"].to_numpy(dtype=np.float64)
    out["longitude"] = df["longitude"].to_numpy(dtype=np.float64)
    out["time"] = df["time_epoch_s"].to_numpy(dtype=np.float64)
    out["sif"] = df["sif_740nm"].to_numpy(dtype=np.float64)
    out["sif_variance"] = df["sif_variance"].to_numpy(dtype=np.float64)
    out["quality_flag"] = df["quality_flag"].to_numpy(dtype=np.int32)
    if np.any(out["sif_variance"] <= 0):
        bad = int(np.flatnonzero(out["sif_variance"] <= 0)[0])
        raise ValueError(f"{path}: nonpositive sif_variance at data row {bad}")
    if not np.all(np.isin(out["quality_flag"], [0, 1, 2])):
        raise ValueError(f"{path}: quality_flag outside {{0,1,2}}")
    _, doy = utc_year_and_day(out["time"])
    out["day_of_year"] = doy
    return out


def write_soundings(path, records: np.ndarray) -> None:
    """Write the columnar sounding layout back to the CSV interchange form."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(SOUNDING_CSV_COLUMNS) + "\n")
        for r in records:
            fh.write(f'{r["latitude"]:.17g},{r["longitude"]:.17g},'
                     f'{r["time"]:.17g},{r["sif"]:.17g},'
                     f'{r["sif_variance"]:.17g},{int(r["quality_flag"])}\n')


def filter_quality(records: np.ndarray,
                   counters: RejectionCounters | None = None) -> np.ndarray:
    """Retain exactly the best (0) and good (1) quality flags, preserving
    order; failed (2) retrievals are dropped."""
    keep = np.isin(records["quality_flag"], [QUALITY_BEST, QUALITY_GOOD])
    if counters is not None:
        counters.quality += int((~keep).sum())
    return records[keep]


def _pixel_indices(lat, lon, resolution: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row/col of the half-open pixel containing each coordinate, plus a
    validity mask (latitude inside [-90, 90); longitude wrapped)."""
    inv = round(1.0 / resolution)
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    lon_wrapped = lon - 360.0 * np.floor((lon + 180.0) / 360.0)
    row = np.floor(lat * inv).astype(np.int64) + 90 * inv
    col = np.floor(lon_wrapped * inv).astype(np.int64) + 180 * inv
    nrows, ncols = 180 * inv, 360 * inv
    valid = (row >= 0) & (row < nrows) & (col >= 0) & (col < ncols)
    return row, col, valid


def cell_indices(lat, lon) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """1-degree cell (lat_index, lon_index, valid) of each coordinate."""
    return _pixel_indices(lat, lon, 1.0)


def mask_ocean(records: np.ndarray, map005: LandCoverMap,
               counters: RejectionCounters | None = None) -> np.ndarray:
    """Drop records whose containing 0.05-degree pixel is water (class 17).

    Records outside the map's latitude range are rejected and counted
    separately.
    """
    if map005.resolution != 0.05:
        raise ValueError("ocean masking needs the 0.05-degree land cover map")
    row, col, valid = _pixel_indices(records["latitude"], records["longitude"], 0.05)
    water = np.zeros(len(records), dtype=bool)
    water[valid] = map005.codes[row[valid], col[valid]] == WATER_BODIES
    keep = valid & ~water
    if counters is not None:
        counters.out_of_bounds += int((~valid).sum())
        counters.ocean += int(water.sum())
    return records[keep]


def upscale_landcover(map005: LandCoverMap) -> LandCoverMap:
    """Majority land cover at 1 degree: the modal non-water class over the
    400 pixels of each cell; all-water cells stay water.  Ties break to the
    lowest class code (unclassified 255 sorts last), independent of pixel
    traversal order."""
    if map005.resolution != 0.05:
        raise ValueError("upscaling starts from the 0.05-degree map")
    blocks = (map005.codes.reshape(180, 20, 360, 20)
              .swapaxes(1, 2).reshape(180, 360, 400))
    best_count = np.zeros((180, 360), dtype=np.int64)
    best_code = np.full((180, 360), WATER_BODIES, dtype=np.uint8)
    candidates = [c for c in sorted(LAND_COVER_CODES) if c != WATER_BODIES]
    for code in candidates:
        count = (blocks == code).sum(axis=2)
        better = count > best_count
        best_code[better] = code
        best_count[better] = count[better]
    return LandCoverMap(resolution=1.0, codes=best_code)


def exclude_cells(map1deg: LandCoverMap) -> np.ndarray:
    """Boolean 1-degree mask of modeled cells: everything except permanent
    snow/ice (15), barren (16) and water (17).  Unclassified (255) cells
    remain modeled."""
    if map1deg.resolution != 1.0:
        raise ValueError("exclusion mask is defined on the 1-degree map")
    return ~np.isin(map1deg.codes, list(EXCLUDED_LAND_COVER))


def count_unclassified_cells(map1deg: LandCoverMap, mask: np.ndarray) -> int:
    """Advisory count of modeled cells carrying the unclassified code."""
    return int(np.sum((map1deg.codes == UNCLASSIFIED) & mask))


def group_cell_year(records: np.ndarray, map1deg: LandCoverMap,
                    mask: np.ndarray, year: int,
                    counters: RejectionCounters | None = None) -> list[CellYearDataset]:
    """Partition records into per-cell datasets with per-day grouping.

    Records in masked cells, outside the grid, or outside the given UTC
    year are dropped and counted.  Days are sorted ascending; each day's
    t is the mean fractional day-of-year of its soundings.
    """
    i, j, valid = cell_indices(records["latitude"], records["longitude"])
    years, _ = utc_year_and_day(records["time"])
    right_year = years == year
    ok = valid & right_year
    if counters is not None:
        counters.out_of_bounds += int((~valid).sum())
        counters.wrong_year += int((valid & ~right_year).sum())
    modeled = np.zeros(len(records), dtype=bool)
    modeled[ok] = mask[i[ok], j[ok]]
    if counters is not None:
        counters.masked_cell += int((ok & ~modeled).sum())
    keep = ok & modeled

    recs = records[keep]
    i, j = i[keep], j[keep]
    day_int = np.floor(recs["day_of_year"]).astype(np.int64)
    order = np.lexsort((np.arange(len(recs)), day_int, j, i))
    recs, i, j, day_int = recs[order], i[order], j[order], day_int[order]

    datasets = []
    if len(recs) == 0:
        return datasets
    cell_change = np.flatnonzero((np.diff(i) != 0) | (np.diff(j) != 0)) + 1
    cell_starts = np.concatenate([[0], cell_change, [len(recs)]])
    for cs, ce in zip(cell_starts[:-1], cell_starts[1:]):
        cell = (int(i[cs]), int(j[cs]))
        days = []
        d = day_int[cs:ce]
        sub = recs[cs:ce]
        day_change = np.flatnonzero(np.diff(d)) + 1
        day_starts = np.concatenate([[0], day_change, [len(sub)]])
        for ds_, de in zip(day_starts[:-1], day_starts[1:]):
            chunk = sub[ds_:de]
            days.append(OverpassDay(t=float(chunk["day_of_year"].mean()),
                                    soundings=chunk.copy()))
        datasets.append(CellYearDataset(
            cell_id=cell, year=year, days=days,
            land_cover=int(map1deg.codes[cell])))
    return datasets


def aggregate_time(day: OverpassDay, coincident_xco2_time=None) -> int:
    """Product time of one overpass day in whole epoch seconds.

    A coincident gridded-XCO2 time takes precedence when supplied;
    otherwise the arithmetic mean of the sounding times, rounded half-up.
    """
    if coincident_xco2_time is not None:
        return int(coincident_xco2_time)
    mean = float(day.times.mean())
    return int(math.floor(mean + 0.5))


def read_xco2_times(path) -> dict:
    """Optional coincident-time table: (lat_index, lon_index, year,
    day_of_year) -> epoch seconds."""
    df = pd.read_csv(path)
    if list(df.columns) != XCO2_TIME_COLUMNS:
        raise ValueError(f"{path}: expected columns {XCO2_TIME_COLUMNS}")
    out = {}
    for row in df.itertuples(index=False):
        key = (int(row.cell_lat_index), int(row.cell_lon_index),
               int(row.year), int(row.day_of_year))
        out[key] = int(row.time_epoch_s)
    return out
