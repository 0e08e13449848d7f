"""Gridded product serialization.

One product file per year: a comma-separated table whose header names the
product variables (the date structure expanded to seven columns) plus a
JSON metadata sidecar carrying the product version, seed, and input
digests.  Floats are written with 17 significant digits so the round trip
is lossless; identical inputs produce byte-identical files.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from datetime import datetime, timezone

import numpy as np

from .model import EXCLUDED_LAND_COVER, LAND_COVER_CODES, cell_center

PRODUCT_VERSION = "1.0.0"

PRODUCT_COLUMNS = [
    "sif_740nm", "sif_uncertainty", "sif_quantile_2.5", "sif_quantile_97.5",
    "sif_land_cover", "sif_latitude", "sif_longitude", "sif_time",
    "sif_date_year", "sif_date_month", "sif_date_day", "sif_date_hour",
    "sif_date_minute", "sif_date_second", "sif_date_ms",
]

VARIABLE_UNITS = {
    "sif_740nm": "W m-2 sr-1 um-1",
    "sif_uncertainty": "W m-2 sr-1 um-1",
    "sif_quantile_2.5": "W m-2 sr-1 um-1",
    "sif_quantile_97.5": "W m-2 sr-1 um-1",
    "sif_land_cover": "N/A",
    "sif_latitude": "Degrees North",
    "sif_longitude": "Degrees East",
    "sif_time": "Seconds since 1970-01-01 00:00:00",
    "sif_date": "N/A",
}


class ProductFormatError(ValueError):
    """A product file failed structural or invariant validation."""

    def __init__(self, message, *, byte_offset=None, row=None):
        super().__init__(message)
        self.byte_offset = byte_offset
        self.row = row


def utc_date_tuple(time_s: int) -> tuple:
    """(year, month, day, hour, minute, second, milliseconds) of an epoch
    time under UTC; milliseconds are zero for whole-second times."""
    dt = datetime.fromtimestamp(int(time_s), tz=timezone.utc)
    return (dt.year, dt.month, dt.day, dt.hour, dt.minute, dt.second, 0)


@dataclass(frozen=True)
class GriddedProductRecord:
    """One product row: posterior summaries of the daily mean SIF of one
    cell on one overpass day, with context."""

    sif_740nm: float
    sif_uncertainty: float
    sif_quantile_2_5: float
    sif_quantile_97_5: float
    sif_land_cover: int
    sif_latitude: float
    sif_longitude: float
    sif_time: int
    sif_date: tuple  # (year, month, day, hour, minute, second, ms)

    def validate(self) -> None:
        for name in ("sif_740nm", "sif_uncertainty", "sif_quantile_2_5",
                     "sif_quantile_97_5"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.sif_quantile_2_5 > self.sif_quantile_97_5:
            raise ValueError("sif_quantile_2.5 exceeds sif_quantile_97.5")
        if self.sif_uncertainty < 0:
            raise ValueError("sif_uncertainty must be >= 0")
        if self.sif_land_cover not in LAND_COVER_CODES or \
                self.sif_land_cover in EXCLUDED_LAND_COVER:
            raise ValueError(f"invalid product land cover {self.sif_land_cover}")
        if len(self.sif_date) != 7:
            raise ValueError("sif_date must have 7 components")
        if tuple(self.sif_date) != utc_date_tuple(self.sif_time):
            raise ValueError(
                f"sif_date {self.sif_date} inconsistent with sif_time {self.sif_time}")


@dataclass
class ProductMetadata:
    """Sidecar content; everything needed to reproduce the file."""

    product_version: str = PRODUCT_VERSION
    year: int = 0
    seed: int = 0
    sampler_config_digest: str = ""
    prior_table_digest: str = ""
    n_records: int = 0
    variables: dict = None

    def __post_init__(self):
        if self.variables is None:
            self.variables = dict(VARIABLE_UNITS)


def attach_context(summary, cell_id: tuple[int, int], land_cover: int,
                   times) -> list:
    """Turn one posterior summary into product records: the posterior mean,
    sd and quantiles per overpass day, coordinates at the cell center, and
    the per-day product times."""
    times = list(times)
    if len(times) != len(summary.t):
        raise ValueError(f"{len(summary.t)} overpass days but {len(times)} times")
    lat, lon = cell_center(cell_id)
    records = []
    for k, time_s in enumerate(times):
        rec = GriddedProductRecord(
            sif_740nm=float(summary.x_mean[k]),
            sif_uncertainty=float(summary.x_sd[k]),
            sif_quantile_2_5=float(summary.x_q2_5[k]),
            sif_quantile_97_5=float(summary.x_q97_5[k]),
            sif_land_cover=int(land_cover),
            sif_latitude=lat,
            sif_longitude=lon,
            sif_time=int(time_s),
            sif_date=utc_date_tuple(int(time_s)),
        )
        rec.validate()
        records.append(rec)
    return records


def _format_row(r: GriddedProductRecord) -> str:
    d = r.sif_date
    return (f"{r.sif_740nm:.17g},{r.sif_uncertainty:.17g},"
            f"{r.sif_quantile_2_5:.17g},{r.sif_quantile_97_5:.17g},"
            f"{r.sif_land_cover},{r.sif_latitude:.17g},{r.sif_longitude:.17g},"
            f"{r.sif_time},{d[0]},{d[1]},{d[2]},{d[3]},{d[4]},{d[5]},{d[6]}")


def sort_records(records) -> list:
    """Product row order: time, then latitude, then longitude."""
    return sorted(records, key=lambda r: (r.sif_time, r.sif_latitude,
                                          r.sif_longitude))


def write_rows(path, records) -> None:
    """Write header plus rows without a sidecar (per-cell scratch files)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(PRODUCT_COLUMNS) + "\n")
        for r in records:
            fh.write(_format_row(r) + "\n")


def write_product(records, year: int, path, *, metadata: ProductMetadata | None = None,
                  force: bool = False) -> ProductMetadata:
    """Write one year's product file and its metadata sidecar.

    Records are validated (including year consistency) and sorted by
    (time, latitude, longitude).  Refuses to overwrite existing files
    unless ``force``.
    """
    path = os.fspath(path)
    sidecar = path + ".meta.json"
    if not force:
        for p in (path, sidecar):
            if os.path.exists(p):
                raise FileExistsError(f"{p} exists; pass force=True to overwrite")
    records = list(records)
    for k, r in enumerate(records):
        try:
            r.validate()
        except ValueError as exc:
            raise ValueError(f"record {k}: {exc}") from exc
        if r.sif_date[0] != year:
            raise ValueError(f"record {k}: year {r.sif_date[0]} does not match "
                             f"product year {year}")
    records = sort_records(records)
    if metadata is None:
        metadata = ProductMetadata(year=year)
    metadata.year = year
    metadata.n_records = len(records)

    write_rows(path, records)
    with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(asdict(metadata), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return metadata


def _parse_row(line: str, row: int, offset: int) -> GriddedProductRecord:
    parts = line.split(",")
    if len(parts) != len(PRODUCT_COLUMNS):
        raise ProductFormatError(
            f"row {row} at byte offset {offset}: expected "
            f"{len(PRODUCT_COLUMNS)} fields, found {len(parts)}",
            byte_offset=offset, row=row)
    try:
        rec = GriddedProductRecord(
            sif_740nm=float(parts[0]), sif_uncertainty=float(parts[1]),
            sif_quantile_2_5=float(parts[2]), sif_quantile_97_5=float(parts[3]),
            sif_land_cover=int(parts[4]), sif_latitude=float(parts[5]),
            sif_longitude=float(parts[6]), sif_time=int(parts[7]),
            sif_date=tuple(int(v) for v in parts[8:15]))
    except ValueError as exc:
        raise ProductFormatError(
            f"row {row} at byte offset {offset}: unparseable field ({exc})",
            byte_offset=offset, row=row) from exc
    try:
        rec.validate()
    except ValueError as exc:
        raise ProductFormatError(f"row {row}: invariant violation: {exc}",
                                 row=row) from exc
    return rec


def read_product(path) -> tuple[list, ProductMetadata | None]:
    """Lossless inverse of :func:`write_product`.

    Every record is re-validated on load.  Structural damage (bad header,
    truncated or malformed rows) raises :class:`ProductFormatError` naming
    the byte offset; invariant violations name the row.  The metadata
    sidecar is returned when present (scratch files have none).
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob:
        raise ProductFormatError("empty product file", byte_offset=0)
    header_end = blob.find(b"\n")
    if header_end < 0:
        raise ProductFormatError("missing header line terminator", byte_offset=0)
    header = blob[:header_end].decode("utf-8")
    if header.split(",") != PRODUCT_COLUMNS:
        raise ProductFormatError(f"unexpected header: {header!r}", byte_offset=0)

    records = []
    offset = header_end + 1
    row = 0
    while offset < len(blob):
        nl = blob.find(b"\n", offset)
        if nl < 0:
            raise ProductFormatError(
                f"truncated row {row} at byte offset {offset} (no newline)",
                byte_offset=offset, row=row)
        line = blob[offset:nl].decode("utf-8")
        records.append(_parse_row(line, row, offset))
        offset = nl + 1
        row += 1

    sidecar = path + ".meta.json"
    metadata = None
    if os.path.exists(sidecar):
        with open(sidecar, "r", encoding="utf-8") as fh:
            metadata = ProductMetadata(**json.load(fh))
        if metadata.n_records != len(records):
            raise ProductFormatError(
                f"sidecar records count {metadata.n_records} does not match "
                f"file rows {len(records)}")
    return records, metadata


def file_digest(path) -> str:
    """SHA-256 of a file's bytes (used for the prior table digest)."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def export_binary_container(records, path):
    """Deliberately unimplemented: scientific binary containers (NetCDF,
    HDF) are outside this product's scope; the delimited format above is
    the interchange form."""
    raise NotImplementedError(
        "binary-container export is a declared non-goal; write_product "
        "emits the supported delimited format")
