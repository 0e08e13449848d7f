"""Command line interface.

Subcommands: ``run`` (full pipeline), ``fit-prior`` (dense-data
hyperparameter table), ``aggregate`` (biome/month comparison tables), and
``map`` (monthly global grid table).  Settings live in a plain key=value
config file; the flags override it.
"""

import argparse
import logging
import os
import sys

from . import analysis, ingest, pipeline, product
from .gibbs import SamplerConfig

logger = logging.getLogger(__name__)

_SAMPLER_KEYS = {"n_chains": int, "n_iterations": int, "n_burnin": int,
                 "thin": int, "seed": int, "rhat_threshold": float,
                 "ess_threshold": float}

_PATH_KEYS = ("soundings_pattern", "dense_soundings", "prior_table",
              "landcover_005", "biome_map", "xco2_times", "output_dir")


def parse_config_file(path) -> dict:
    """Read a plain ``key = value`` file; ``#`` starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def build_pipeline_config(args) -> pipeline.PipelineConfig:
    raw = parse_config_file(args.config) if args.config else {}

    def pick(key, default=None):
        return raw.get(key, default)

    years = args.years or pick("years")
    if isinstance(years, str):
        years = [int(y) for y in years.replace(",", " ").split()]
    if not years:
        raise ValueError("no years configured (config 'years' or --years)")

    pattern = pick("soundings_pattern")
    soundings = {}
    for year in years:
        explicit = pick(f"soundings_{year}")
        if explicit:
            soundings[year] = explicit
        elif pattern:
            soundings[year] = pattern.format(year=year)

    sampler_kwargs = {}
    for key, cast in _SAMPLER_KEYS.items():
        if pick(key) is not None:
            sampler_kwargs[key] = cast(pick(key))
    if args.seed is not None:
        sampler_kwargs["seed"] = args.seed

    cfg = pipeline.PipelineConfig(
        soundings=soundings,
        landcover_005=pick("landcover_005"),
        output_dir=args.output_dir or pick("output_dir", "sifgrid_out"),
        years=years,
        sampler=SamplerConfig(**sampler_kwargs),
        prior_table=pick("prior_table"),
        dense_soundings=pick("dense_soundings"),
        biome_map=pick("biome_map"),
        xco2_times=pick("xco2_times"),
        workers=args.workers if args.workers is not None
                else int(pick("workers", 1)),
        resume=args.resume or pick("resume", "false").lower() == "true",
        force=args.force or pick("force", "false").lower() == "true",
        prior_day_floor=int(pick("prior_day_floor", 60)),
        harmonics=int(pick("harmonics", 2)),
    )
    return cfg


def _cmd_run(args) -> int:
    cfg = build_pipeline_config(args)
    reports = pipeline.run_pipeline(cfg)
    for report in reports:
        print(report.to_text())
    return 1 if any(r.cells_failed for r in reports) else 0


def _cmd_fit_prior(args) -> int:
    cfg = build_pipeline_config(args)
    path = pipeline.fit_prior_table(cfg)
    print(f"prior table written to {path}")
    return 0


def _read_biome(args) -> ingest.BiomeMap:
    if not args.biome_map:
        raise ValueError("--biome-map is required")
    return ingest.BiomeMap.read(args.biome_map)


def _cmd_aggregate(args) -> int:
    records, _ = product.read_product(args.product)
    biome_map = _read_biome(args)
    hemisphere = None if args.hemisphere == "both" else args.hemisphere
    os.makedirs(args.out_dir, exist_ok=True)

    box_rows, box_unassigned = analysis.monthly_biome_aggregate(
        records, biome_map, hemisphere)
    box_path = os.path.join(args.out_dir, "biome_box_stats.csv")
    analysis.write_table(box_path, analysis.BOX_STATS_COLUMNS, box_rows)

    ribbon_rows, _ = analysis.mean_uncertainty_series(records, biome_map, hemisphere)
    ribbon_path = os.path.join(args.out_dir, "biome_mean_uncertainty.csv")
    analysis.write_table(ribbon_path, analysis.RIBBON_COLUMNS, ribbon_rows)

    print(f"box statistics: {box_path}")
    print(f"mean/uncertainty ribbons: {ribbon_path}")
    print(f"cell-months without biome assignment: {box_unassigned}")
    return 0


def _cmd_map(args) -> int:
    records, _ = product.read_product(args.product)
    rows = analysis.monthly_global_map(records, args.month)
    analysis.write_table(args.out, analysis.MAP_COLUMNS, rows)
    print(f"monthly grid ({len(rows)} cells): {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sifgrid",
        description="Bayesian hierarchical gridding of satellite SIF soundings")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--years", type=int, nargs="+", help="calendar years to process")
        p.add_argument("--workers", type=int, help="worker process count")
        p.add_argument("--seed", type=int, help="base random seed")
        p.add_argument("--resume", action="store_true",
                       help="reuse valid per-cell scratch outputs")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")
        p.add_argument("--output-dir", help="output directory")

    p_run = sub.add_parser("run", help="run the full estimation pipeline")
    add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_fit = sub.add_parser("fit-prior",
                           help="fit per-cell seasonal priors from dense data")
    add_common(p_fit)
    p_fit.set_defaults(func=_cmd_fit_prior)

    p_agg = sub.add_parser("aggregate",
                           help="biome/month comparison tables from a product")
    p_agg.add_argument("--product", required=True, help="product file to aggregate")
    p_agg.add_argument("--biome-map", required=True, help="1-degree biome grid file")
    p_agg.add_argument("--hemisphere", choices=["north", "south", "both"],
                       default="both")
    p_agg.add_argument("--out-dir", required=True, help="table output directory")
    p_agg.set_defaults(func=_cmd_aggregate)

    p_map = sub.add_parser("map", help="monthly mean grid table from a product")
    p_map.add_argument("--product", required=True)
    p_map.add_argument("--month", type=int, required=True, choices=range(1, 13))
    p_map.add_argument("--out", required=True, help="output table path")
    p_map.set_defaults(func=_cmd_map)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FileExistsError,
            product.ProductFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
