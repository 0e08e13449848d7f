"""Biome-level comparison analytics over a gridded product.

Emits plot-ready tables rather than figures: per-biome monthly SIF
distributions (box plot statistics), mean-with-uncertainty ribbons, and
monthly global grids.  Cells sit in the northern hemisphere when their
center latitude is >= 0.  Uncertainty aggregation is root-mean-square at
every level (days into a cell-month, cell-months into a biome-month) so
the convention can be applied identically to any product being compared.
"""

import logging
from collections import defaultdict

import numpy as np

from .ingest import BiomeMap

logger = logging.getLogger(__name__)

BOX_STATS_COLUMNS = ["biome", "month", "hemisphere", "n_cells", "mean",
                     "min", "q1", "median", "q3", "max",
                     "whisker_low", "whisker_high"]

RIBBON_COLUMNS = ["biome", "month", "hemisphere", "n_cells", "mean_sif",
                  "uncertainty", "lower", "upper"]

MAP_COLUMNS = ["latitude", "longitude", "mean_sif"]


def _cell_of(record) -> tuple[int, int]:
    return (int(np.floor(record.sif_latitude)) + 90,
            int(np.floor(record.sif_longitude)) + 180)


def _hemisphere_of(record) -> str:
    return "north" if record.sif_latitude >= 0.0 else "south"


def cell_month_stats(records) -> dict:
    """Per (cell, month): monthly mean SIF, RMS-combined daily uncertainty,
    the hemisphere, and the day count."""
    acc = defaultdict(lambda: [0.0, 0.0, 0])
    hemi = {}
    for r in records:
        key = (_cell_of(r), r.sif_date[1])
        a = acc[key]
        a[0] += r.sif_740nm
        a[1] += r.sif_uncertainty ** 2
        a[2] += 1
        hemi[key] = _hemisphere_of(r)
    return {key: (s / n, np.sqrt(q / n), hemi[key], n)
            for key, (s, q, n) in acc.items()}


def _biome_of(cell: tuple[int, int], biome_map: BiomeMap) -> int:
    return int(biome_map.codes[cell])


def _tukey_whiskers(values: np.ndarray, q1: float, q3: float) -> tuple[float, float]:
    iqr = q3 - q1
    lo_limit = q1 - 1.5 * iqr
    hi_limit = q3 + 1.5 * iqr
    inside = values[(values >= lo_limit) & (values <= hi_limit)]
    return float(inside.min()), float(inside.max())


def monthly_biome_aggregate(records, biome_map: BiomeMap,
                            hemisphere: str | None = None) -> tuple[list, int]:
    """Distribution of per-cell monthly mean SIF within each biome.

    Returns (rows, n_unassigned): one row per (biome, month, hemisphere)
    holding the cell count, mean, quartiles and Tukey whisker values of the
    cell-month means; cell-months without a biome assignment are dropped
    and counted.
    """
    stats = cell_month_stats(records)
    groups = defaultdict(list)
    unassigned = 0
    for (cell, month), (mean_sif, _, hemi, _) in stats.items():
        if hemisphere is not None and hemi != hemisphere:
            continue
        biome = _biome_of(cell, biome_map)
        if biome == 0:
            unassigned += 1
            continue
        groups[(biome, month, hemi)].append(mean_sif)

    rows = []
    for (biome, month, hemi) in sorted(groups):
        vals = np.sort(np.array(groups[(biome, month, hemi)]))
        q1, med, q3 = np.quantile(vals, [0.25, 0.5, 0.75])
        wlo, whi = _tukey_whiskers(vals, float(q1), float(q3))
        rows.append((biome, month, hemi, len(vals), float(vals.mean()),
                     float(vals.min()), float(q1), float(med), float(q3),
                     float(vals.max()), wlo, whi))
    return rows, unassigned


def mean_uncertainty_series(records, biome_map: BiomeMap,
                            hemisphere: str | None = None) -> tuple[list, int]:
    """Biome-month mean SIF with an RMS-aggregated uncertainty band.

    Per cell-month the daily uncertainties combine by root-mean-square;
    per biome-month the cell means average and the cell uncertainties
    combine by root-mean-square, giving the +-1 sd ribbon bounds.
    """
    stats = cell_month_stats(records)
    groups = defaultdict(lambda: ([], []))
    unassigned = 0
    for (cell, month), (mean_sif, unc, hemi, _) in stats.items():
        if hemisphere is not None and hemi != hemisphere:
            continue
        biome = _biome_of(cell, biome_map)
        if biome == 0:
            unassigned += 1
            continue
        g = groups[(biome, month, hemi)]
        g[0].append(mean_sif)
        g[1].append(unc)

    rows = []
    for (biome, month, hemi) in sorted(groups):
        means, uncs = groups[(biome, month, hemi)]
        m = float(np.mean(means))
        u = float(np.sqrt(np.mean(np.square(uncs))))
        rows.append((biome, month, hemi, len(means), m, u, m - u, m + u))
    return rows, unassigned


def monthly_global_map(records, month: int) -> list:
    """Per-cell mean SIF over one month's records as a plot-ready grid
    table (center latitude, center longitude, mean); cells without data are
    simply absent."""
    acc = defaultdict(lambda: [0.0, 0])
    for r in records:
        if r.sif_date[1] != month:
            continue
        a = acc[(r.sif_latitude, r.sif_longitude)]
        a[0] += r.sif_740nm
        a[1] += 1
    if not acc:
        logger.warning("no product records in month %d; emitting an empty grid", month)
    return [(lat, lon, s / n) for (lat, lon), (s, n) in sorted(acc.items())]


def write_table(path, columns: list, rows) -> None:
    """Comma-separated table with deterministic float formatting."""
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.17g}"
        return str(v)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
