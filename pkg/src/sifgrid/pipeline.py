"""End-to-end pipeline: soundings to gridded product files.

A coordinator distributes independent cell-year fits to a process pool and
performs all writes itself.  Each cell's chains are seeded from (seed,
cell, year, chain), so products are byte-identical regardless of worker
count or completion order.  Finished cells are cached as per-cell scratch
files; ``resume`` reuses any that validate, making interrupted runs
restartable without changing the final bytes.
"""

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from . import hyperprior, ingest, product
from .gibbs import PackedCellData, SamplerConfig, run_chain
from .model import CellYearDataset
from .product import ProductMetadata

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """Validated inputs of one pipeline run."""

    soundings: dict            # year -> path
    landcover_005: str
    output_dir: str
    years: list
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    prior_table: str | None = None
    dense_soundings: str | None = None
    biome_map: str | None = None
    xco2_times: str | None = None
    workers: int = 1
    resume: bool = False
    force: bool = False
    prior_day_floor: int = 60
    harmonics: int = 2

    def validate(self) -> None:
        if not self.years:
            raise ValueError("years must not be empty")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        missing = []
        for year in self.years:
            p = self.soundings.get(year)
            if p is None or not os.path.exists(p):
                missing.append(f"soundings for {year}: {p}")
        if self.landcover_005 is None:
            missing.append("landcover_005 is required")
        for name in ("landcover_005", "prior_table", "dense_soundings",
                     "biome_map", "xco2_times"):
            p = getattr(self, name)
            if p is not None and not os.path.exists(p):
                missing.append(f"{name}: {p}")
        if missing:
            raise FileNotFoundError("missing inputs: " + "; ".join(missing))
        if self.prior_table is None and self.dense_soundings is None:
            logger.warning("no prior table or dense data configured; "
                           "every cell will use the global default prior")


@dataclass
class YearReport:
    """Per-year accounting emitted beside the product."""

    year: int
    product_path: str
    n_input_records: int = 0
    rejections: dict = field(default_factory=dict)
    cells_total: int = 0
    cells_completed: int = 0
    cells_resumed: int = 0
    cells_failed: list = field(default_factory=list)
    cells_converged: int = 0
    cells_not_converged: int = 0
    default_prior_cells: int = 0
    unclassified_cells_modeled: int = 0
    elapsed_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "year": self.year,
            "product_path": self.product_path,
            "n_input_records": self.n_input_records,
            "rejections": self.rejections,
            "cells_total": self.cells_total,
            "cells_completed": self.cells_completed,
            "cells_resumed": self.cells_resumed,
            "cells_failed": self.cells_failed,
            "cells_converged": self.cells_converged,
            "cells_not_converged": self.cells_not_converged,
            "default_prior_cells": self.default_prior_cells,
            "unclassified_cells_modeled": self.unclassified_cells_modeled,
            "elapsed_seconds": self.elapsed_seconds,
        }

    def to_text(self) -> str:
        lines = [
            f"year {self.year}: {self.cells_completed}/{self.cells_total} cells "
            f"({self.cells_resumed} resumed, {len(self.cells_failed)} failed)",
            f"  input records: {self.n_input_records}",
            f"  rejections: {self.rejections}",
            f"  converged: {self.cells_converged}, "
            f"not converged: {self.cells_not_converged}",
            f"  default-prior cells: {self.default_prior_cells}",
            f"  unclassified cells modeled: {self.unclassified_cells_modeled}",
            f"  product: {self.product_path}",
            f"  elapsed: {self.elapsed_seconds:.1f} s",
        ]
        for cell, err in self.cells_failed:
            lines.append(f"  FAILED {cell}: {err}")
        return "\n".join(lines)


def _fit_cell(payload):
    """Worker task: fit one cell-year and build its product rows."""
    dataset, prior, config, harmonics, times = payload
    cell = dataset.cell_id
    try:
        packed = PackedCellData.from_cell_year(dataset, harmonics=harmonics)
        summary = run_chain(packed, prior, config,
                            cell_key=(cell[0], cell[1], dataset.year))
        rows = product.attach_context(summary, cell, dataset.land_cover, times)
        return cell, rows, summary.converged, None
    except Exception as exc:  # per-cell failures never kill the run
        return cell, None, False, f"{type(exc).__name__}: {exc}"


def _scratch_path(scratch_dir: str, cell: tuple[int, int]) -> str:
    return os.path.join(scratch_dir, f"cell_{cell[0]:03d}_{cell[1]:03d}.csv")


def _load_valid_scratch(path):
    try:
        rows, _ = product.read_product(path)
        return rows
    except (OSError, product.ProductFormatError):
        return None


def _fit_prior_cell(payload):
    """Worker task: one dense-data prior fit."""
    cell, records, sampler, day_floor, harmonics = payload
    dense = hyperprior.DenseCellDataset(cell_id=cell, records=records)
    try:
        result = hyperprior.fit_seasonal_prior(dense, sampler,
                                               day_floor=day_floor,
                                               harmonics=harmonics)
    except ValueError:
        return cell, None
    return cell, result.spec


def fit_prior_table(config: PipelineConfig) -> str:
    """Fit per-cell seasonal priors from the configured dense soundings and
    write the prior table into the output directory.  Cell fits are
    independent and run on the worker pool."""
    if config.dense_soundings is None:
        raise ValueError("no dense_soundings configured")
    os.makedirs(config.output_dir, exist_ok=True)
    records = ingest.read_soundings(config.dense_soundings)
    records = ingest.filter_quality(records)
    i, j, valid = ingest.cell_indices(records["latitude"], records["longitude"])
    records = records[valid]
    i, j = i[valid], j[valid]

    order = np.lexsort((np.arange(len(records)), j, i))
    records, i, j = records[order], i[order], j[order]
    change = np.flatnonzero((np.diff(i) != 0) | (np.diff(j) != 0)) + 1
    starts = np.concatenate([[0], change, [len(records)]])
    payloads = [((int(i[s]), int(j[s])), records[s:e].copy(), config.sampler,
                 config.prior_day_floor, config.harmonics)
                for s, e in zip(starts[:-1], starts[1:])]

    if config.workers == 1:
        results = [_fit_prior_cell(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_fit_prior_cell, payloads))
    specs = {cell: spec for cell, spec in results if spec is not None}
    skipped = len(results) - len(specs)
    if not specs:
        raise ValueError("no cell met the dense-data day floor; "
                         "cannot build a prior table")
    path = os.path.join(config.output_dir, "prior_table.csv")
    hyperprior.export_prior_table(specs, path, force=config.force or config.resume)
    logger.info("prior table: %d cells fitted, %d below the day floor",
                len(specs), skipped)
    return path


def _resolve_priors(config: PipelineConfig) -> tuple[dict, str]:
    """Load or derive the per-cell prior table; returns (specs, digest)."""
    path = config.prior_table
    if path is None and config.dense_soundings is not None:
        candidate = os.path.join(config.output_dir, "prior_table.csv")
        if config.resume and os.path.exists(candidate):
            path = candidate
        else:
            path = fit_prior_table(config)
    if path is None:
        return {}, ""
    return hyperprior.read_prior_table(path), product.file_digest(path)


def run_pipeline(config: PipelineConfig) -> list:
    """Run every configured year; returns the per-year reports."""
    config.validate()
    os.makedirs(config.output_dir, exist_ok=True)

    map005 = ingest.LandCoverMap.read(config.landcover_005)
    map1 = ingest.upscale_landcover(map005)
    mask = ingest.exclude_cells(map1)
    priors, prior_digest = _resolve_priors(config)
    xco2 = ingest.read_xco2_times(config.xco2_times) if config.xco2_times else {}

    reports = []
    for year in config.years:
        reports.append(_run_year(config, year, map005, map1, mask,
                                 priors, prior_digest, xco2))
    return reports


def _cell_times(dataset: CellYearDataset, xco2: dict) -> list:
    i, j = dataset.cell_id
    return [ingest.aggregate_time(
                day, xco2.get((i, j, dataset.year, day.day_index)))
            for day in dataset.days]


def _run_year(config, year, map005, map1, mask, priors, prior_digest, xco2):
    t0 = time.monotonic()
    counters = ingest.RejectionCounters()
    records = ingest.read_soundings(config.soundings[year])
    n_input = len(records)
    records = ingest.filter_quality(records, counters)
    records = ingest.mask_ocean(records, map005, counters)
    datasets = ingest.group_cell_year(records, map1, mask, year, counters)

    product_path = os.path.join(config.output_dir, f"sif_gridded_{year}.csv")
    report = YearReport(year=year, product_path=product_path,
                        n_input_records=n_input,
                        rejections=counters.as_dict(),
                        cells_total=len(datasets))
    report.unclassified_cells_modeled = ingest.count_unclassified_cells(map1, mask)
    if not datasets:
        logger.warning("year %d has no modelable records; writing an empty product", year)

    scratch_dir = os.path.join(config.output_dir, f"scratch_{year}")
    os.makedirs(scratch_dir, exist_ok=True)

    payloads = []
    rows_by_cell = {}
    default_cells = 0
    for dataset in sorted(datasets, key=lambda d: d.cell_id):
        cell = dataset.cell_id
        prior = priors.get(cell)
        if prior is None:
            prior = hyperprior.default_prior(config.harmonics)
            default_cells += 1
        if config.resume:
            cached = _load_valid_scratch(_scratch_path(scratch_dir, cell))
            if cached is not None:
                rows_by_cell[cell] = cached
                report.cells_resumed += 1
                continue
        payloads.append((dataset, prior, config.sampler, config.harmonics,
                         _cell_times(dataset, xco2)))
    report.default_prior_cells = default_cells

    def handle(cell, rows, converged, error):
        if error is not None:
            report.cells_failed.append((list(cell), error))
            logger.error("cell %s failed: %s", cell, error)
            return
        product.write_rows(_scratch_path(scratch_dir, cell), rows)
        rows_by_cell[cell] = rows
        if converged:
            report.cells_converged += 1
        else:
            report.cells_not_converged += 1

    if config.workers == 1:
        for payload in payloads:
            handle(*_fit_cell(payload))
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_fit_cell, p) for p in payloads]
            for fut in as_completed(futures):
                handle(*fut.result())

    all_rows = []
    for cell in sorted(rows_by_cell):
        all_rows.extend(rows_by_cell[cell])
    report.cells_completed = len(rows_by_cell)

    metadata = ProductMetadata(year=year, seed=config.sampler.seed,
                               sampler_config_digest=config.sampler.digest(),
                               prior_table_digest=prior_digest)
    product.write_product(all_rows, year, product_path, metadata=metadata,
                          force=config.force or config.resume)
    report.elapsed_seconds = time.monotonic() - t0

    report_base = os.path.join(config.output_dir, f"run_report_{year}")
    with open(report_base + ".json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(report_base + ".txt", "w", encoding="utf-8") as fh:
        fh.write(report.to_text() + "\n")
    logger.info("%s", report.to_text())
    return report
