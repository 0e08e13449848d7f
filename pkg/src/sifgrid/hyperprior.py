"""Informative seasonal priors fitted from a temporally dense SIF record.

The same hierarchy is fitted to dense (daily-revisit) data with bounded
uniform priors on every seasonal coefficient; the resulting posterior means
and variances become the per-cell normal prior hyperparameters used by the
sparse-data fits.  Multi-year dense records are pooled on day-of-year so a
single seasonal cycle is estimated.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import gibbs
from .model import (
    SOUNDING_DTYPE,
    SeasonalPriorSpec,
    cell_bounds,
)

PRIOR_FLAG_FITTED = 0
PRIOR_FLAG_BOUNDARY = 1
PRIOR_FLAG_DEFAULT = 2

#: Stream tag mixed into the seed so hyperparameter fits never share a
#: random stream with the product fits of the same cell.
_PRIOR_STREAM = 0x5EA5

PRIOR_TABLE_COLUMNS = [
    "cell_lat_index", "cell_lon_index",
    "b0", "s0", "b1", "s1",
    "b2_1", "s2_1", "b3_1", "s3_1",
    "b2_2", "s2_2", "b3_2", "s3_2",
    "flag",
]


@dataclass
class DenseCellDataset:
    """Dense soundings of one 1-degree cell, possibly spanning several
    years; day-of-year is what matters downstream."""

    cell_id: tuple[int, int]
    records: np.ndarray
    source: str = "dense"

    def __post_init__(self):
        if self.records.dtype != SOUNDING_DTYPE:
            raise ValueError("records must use SOUNDING_DTYPE")
        if len(self.records) == 0:
            raise ValueError("dense dataset must not be empty")
        lat_lo, lat_hi, lon_lo, lon_hi = cell_bounds(self.cell_id)
        lat = self.records["latitude"]
        lon = self.records["longitude"]
        if np.any((lat < lat_lo) | (lat >= lat_hi) | (lon < lon_lo) | (lon >= lon_hi)):
            raise ValueError(f"record outside cell {self.cell_id} bounds")

    @property
    def n_distinct_days(self) -> int:
        return len(np.unique(np.floor(self.records["day_of_year"]).astype(np.int64)))


@dataclass
class PriorFitResult:
    """Outcome of one dense-data fit: the prior spec (posterior means and
    variances of the coefficients) plus quality signals."""

    spec: SeasonalPriorSpec
    converged: bool
    boundary_fraction: np.ndarray  # per coefficient, fraction of draws near a bound
    n_distinct_days: int


def default_prior(harmonics: int = 2) -> SeasonalPriorSpec:
    """Vague global fallback for cells without a dense-data fit."""
    return SeasonalPriorSpec.default(harmonics=harmonics, flag=PRIOR_FLAG_DEFAULT)


def pack_dense(data: DenseCellDataset, harmonics: int = 2) -> gibbs.PackedCellData:
    """Group dense records by integer day-of-year (pooling years) and pack
    them for the sampler; each group's t is its mean fractional day."""
    doy = data.records["day_of_year"]
    day_int = np.floor(doy).astype(np.int64)
    order = np.lexsort((np.arange(len(day_int)), day_int))
    day_sorted = day_int[order]
    recs = data.records[order]
    boundaries = np.flatnonzero(np.diff(day_sorted)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(recs)]])
    t, z_by_day, tau_by_day = [], [], []
    for s, e in zip(starts, ends):
        t.append(float(recs["day_of_year"][s:e].mean()))
        z_by_day.append(recs["sif"][s:e])
        tau_by_day.append(recs["sif_variance"][s:e])
    return gibbs.PackedCellData.from_days(t, z_by_day, tau_by_day, harmonics=harmonics)


def fit_seasonal_prior(data: DenseCellDataset, config: gibbs.SamplerConfig, *,
                       day_floor: int = 60, harmonics: int = 2,
                       bounds: tuple[float, float] = (-1.0, 1.0),
                       boundary_margin: float = 0.01,
                       kernel=None) -> PriorFitResult:
    """Fit the hierarchy with Unif(bounds) priors on every coefficient and
    extract (posterior mean, posterior variance) per coefficient.

    Requires at least ``day_floor`` distinct days so all coefficients are
    identified.  Posterior mass piling against the coefficient bounds
    (fraction within ``boundary_margin`` of the range of either bound
    exceeding 1%) is flagged: the normal prior summary is then a poor
    description of that posterior.
    """
    n_days = data.n_distinct_days
    if n_days < day_floor:
        raise ValueError(
            f"dense fit needs >= {day_floor} distinct days, have {n_days}")
    packed = pack_dense(data, harmonics=harmonics)
    base = SeasonalPriorSpec.default(harmonics=harmonics)
    i, j = data.cell_id
    draws = gibbs.sample_posterior(
        packed, base, config, cell_key=(int(i), int(j), _PRIOR_STREAM),
        beta_prior="uniform", beta_bounds=bounds, kernel=kernel)

    m, L, P = draws.beta.shape
    pooled = draws.beta.reshape(m * L, P)
    b = pooled.mean(axis=0)
    s = pooled.var(axis=0, ddof=1)

    lo, hi = bounds
    margin = boundary_margin * (hi - lo)
    near = (pooled <= lo + margin) | (pooled >= hi - margin)
    boundary_fraction = near.mean(axis=0)
    pileup = bool(np.any(boundary_fraction > 0.01))

    rhats = [gibbs.split_rhat(draws.beta[:, :, p]) for p in range(P)]
    converged = bool(np.all(np.isfinite(rhats))
                     and np.all(np.asarray(rhats) <= config.rhat_threshold))

    spec = SeasonalPriorSpec.from_vectors(
        b, s, a_bounds=base.a_bounds, precision_rate=base.precision_rate,
        flag=PRIOR_FLAG_BOUNDARY if pileup else PRIOR_FLAG_FITTED)
    return PriorFitResult(spec=spec, converged=converged,
                          boundary_fraction=boundary_fraction,
                          n_distinct_days=n_days)


def export_prior_table(specs: dict, path, *, force: bool = False) -> None:
    """Write the per-cell prior table: one row per cell in lat-major order,
    the K=2 hyperparameter columns, and the provenance flag.  Refuses to
    overwrite unless ``force``."""
    if not specs:
        raise ValueError("prior table must contain at least one cell")
    path = os.fspath(path)
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists; pass force=True to overwrite")
    lines = [",".join(PRIOR_TABLE_COLUMNS)]
    for cell_id in sorted(specs):
        spec = specs[cell_id]
        if spec.K != 2:
            raise ValueError(
                f"prior table stores exactly 2 harmonics, cell {cell_id} has {spec.K}")
        b = spec.mean_vector()
        s = spec.var_vector()
        vals = [str(cell_id[0]), str(cell_id[1])]
        for p in range(len(b)):
            vals.append(f"{b[p]:.17g}")
            vals.append(f"{s[p]:.17g}")
        vals.append(str(spec.flag))
        lines.append(",".join(vals))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_prior_table(path) -> dict:
    """Inverse of :func:`export_prior_table`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header.split(",") != PRIOR_TABLE_COLUMNS:
            raise ValueError(f"unexpected prior table header in {path}")
        out = {}
        for ln, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(PRIOR_TABLE_COLUMNS):
                raise ValueError(f"{path}:{ln}: expected "
                                 f"{len(PRIOR_TABLE_COLUMNS)} columns")
            cell = (int(parts[0]), int(parts[1]))
            vals = [float(v) for v in parts[2:14]]
            mean = np.array(vals[0::2])
            var = np.array(vals[1::2])
            out[cell] = SeasonalPriorSpec.from_vectors(mean, var,
                                                       flag=int(parts[14]))
    return out
