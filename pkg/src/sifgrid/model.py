"""Domain types and deterministic mathematics of the hierarchical SIF model.

The model relates sounding-level retrievals to a daily 1-degree mean SIF
process through three Gaussian stages:

    retrieval     Z_it = Y_it + m_it,    m_it ~ N(0, tau_it)
    within-cell   Y_it = X_t  + r_it,    r_it ~ N(0, nu_t)
    daily mean    X_t  = mu_t + d_t,     d_t  ~ N(0, delta)

where ``mu_t`` is a harmonic seasonal regression in fractional day-of-year
with a bounded vertical-shift term.  This module holds the value types, the
seasonal design, the log joint density of the full hierarchy, and a forward
simulator used as a testing oracle.  Everything here is a pure function of
its inputs; randomness enters only through an explicit seed.
"""

import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

FOURIER_PERIOD_DAYS = 365.25

#: MODIS-style majority land cover codes (1..17 plus 255 = unclassified).
LAND_COVER_CODES = frozenset(range(1, 18)) | {255}

#: Land cover classes never modeled: permanent snow/ice, barren, water.
EXCLUDED_LAND_COVER = frozenset({15, 16, 17})

QUALITY_BEST = 0
QUALITY_GOOD = 1
QUALITY_FAILED = 2

#: Columnar layout used for bulk sounding processing.
SOUNDING_DTYPE = np.dtype([
    ("latitude", "f8"),
    ("longitude", "f8"),
    ("time", "f8"),
    ("day_of_year", "f8"),
    ("sif", "f8"),
    ("sif_variance", "f8"),
    ("quality_flag", "i4"),
])


def year_start_epoch(year: int) -> float:
    """Epoch seconds of January 1st 00:00:00 UTC of ``year``."""
    return datetime(year, 1, 1, tzinfo=timezone.utc).timestamp()


def utc_year_and_day(times) -> tuple[np.ndarray, np.ndarray]:
    """Split epoch seconds into UTC calendar year and fractional day-of-year.

    Day-of-year is zero-based: noon on January 1st maps to 0.5.  Handles
    leap years through the proleptic Gregorian calendar.
    """
    secs = np.asarray(times, dtype=np.float64)
    whole = np.floor(secs).astype(np.int64).astype("datetime64[s]")
    years64 = whole.astype("datetime64[Y]")
    years = years64.astype(np.int64) + 1970
    year_start = years64.astype("datetime64[s]").astype(np.int64).astype(np.float64)
    doy = (secs - year_start) / 86400.0
    return years, doy


@dataclass(frozen=True)
class SoundingRecord:
    """One satellite retrieval: location, time, value, and error variance."""

    latitude: float
    longitude: float
    time: float                 # seconds since 1970-01-01T00:00:00 UTC
    day_of_year: float          # fractional UTC day-of-year in [0, 366)
    sif: float                  # W m-2 sr-1 um-1; may be negative
    retrieval_variance: float   # (W m-2 sr-1 um-1)^2, strictly positive
    quality_flag: int           # 0 best, 1 good, 2 failed

    def __post_init__(self):
        if not self.retrieval_variance > 0:
            raise ValueError(f"retrieval_variance must be > 0, got {self.retrieval_variance}")
        if self.quality_flag not in (QUALITY_BEST, QUALITY_GOOD, QUALITY_FAILED):
            raise ValueError(f"quality_flag must be 0, 1 or 2, got {self.quality_flag}")
        if not 0.0 <= self.day_of_year < 366.0:
            raise ValueError(f"day_of_year must lie in [0, 366), got {self.day_of_year}")
        _, doy = utc_year_and_day(self.time)
        if abs(float(doy) - self.day_of_year) > 1e-6:
            raise ValueError(
                f"day_of_year {self.day_of_year} inconsistent with time {self.time} "
                f"(UTC conversion gives {float(doy)})")


def pack_soundings(records) -> np.ndarray:
    """Convert an iterable of SoundingRecord into the columnar layout."""
    records = list(records)
    out = np.empty(len(records), dtype=SOUNDING_DTYPE)
    for k, r in enumerate(records):
        out[k] = (r.latitude, r.longitude, r.time, r.day_of_year,
                  r.sif, r.retrieval_variance, r.quality_flag)
    return out


def unpack_soundings(arr: np.ndarray) -> list[SoundingRecord]:
    """Inverse of :func:`pack_soundings`."""
    return [SoundingRecord(float(r["latitude"]), float(r["longitude"]),
                           float(r["time"]), float(r["day_of_year"]),
                           float(r["sif"]), float(r["sif_variance"]),
                           int(r["quality_flag"]))
            for r in arr]


@dataclass
class OverpassDay:
    """All soundings of one grid cell on one UTC calendar day.

    ``t`` is the fractional day-of-year used in the seasonal regression
    (the mean of the soundings' fractional days).
    """

    t: float
    soundings: np.ndarray  # SOUNDING_DTYPE, n >= 1 entries

    def __post_init__(self):
        if self.soundings.dtype != SOUNDING_DTYPE:
            raise ValueError("soundings must use SOUNDING_DTYPE")
        if len(self.soundings) < 1:
            raise ValueError("an overpass day needs at least one sounding")
        days = np.floor(self.soundings["day_of_year"]).astype(np.int64)
        if not np.all(days == days[0]):
            raise ValueError("soundings of one overpass day must share a calendar day")
        if not days[0] <= self.t < days[0] + 1:
            raise ValueError(f"t={self.t} outside the soundings' calendar day {days[0]}")

    @property
    def n(self) -> int:
        return len(self.soundings)

    @property
    def z(self) -> np.ndarray:
        return np.ascontiguousarray(self.soundings["sif"], dtype=np.float64)

    @property
    def tau(self) -> np.ndarray:
        return np.ascontiguousarray(self.soundings["sif_variance"], dtype=np.float64)

    @property
    def times(self) -> np.ndarray:
        return np.ascontiguousarray(self.soundings["time"], dtype=np.float64)

    @property
    def day_index(self) -> int:
        """Integer UTC day-of-year of this overpass."""
        return int(math.floor(self.soundings["day_of_year"][0]))


def cell_bounds(cell_id: tuple[int, int]) -> tuple[float, float, float, float]:
    """Half-open (lat_lo, lat_hi, lon_lo, lon_hi) bounds of a 1-degree cell.

    Cell (i, j) covers latitudes [i - 90, i - 89) and longitudes
    [j - 180, j - 179).
    """
    i, j = cell_id
    return (i - 90.0, i - 89.0, j - 180.0, j - 179.0)


def cell_center(cell_id: tuple[int, int]) -> tuple[float, float]:
    """Center coordinates of a 1-degree cell."""
    i, j = cell_id
    return (i - 89.5, j - 179.5)


@dataclass
class CellYearDataset:
    """All overpass days of one 1-degree cell in one calendar year."""

    cell_id: tuple[int, int]   # (lat_index 0..179, lon_index 0..359)
    year: int
    days: list                 # OverpassDay, strictly increasing t
    land_cover: int

    def __post_init__(self):
        i, j = self.cell_id
        if not (0 <= i < 180 and 0 <= j < 360):
            raise ValueError(f"cell_id out of range: {self.cell_id}")
        if self.land_cover not in LAND_COVER_CODES:
            raise ValueError(f"unknown land cover code {self.land_cover}")
        if self.land_cover in EXCLUDED_LAND_COVER:
            raise ValueError(
                f"land cover class {self.land_cover} is excluded from modeling")
        ts = [d.t for d in self.days]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("overpass days must be strictly increasing in t")
        lat_lo, lat_hi, lon_lo, lon_hi = cell_bounds(self.cell_id)
        for d in self.days:
            lat = d.soundings["latitude"]
            lon = d.soundings["longitude"]
            if np.any((lat < lat_lo) | (lat >= lat_hi) | (lon < lon_lo) | (lon >= lon_hi)):
                raise ValueError(
                    f"sounding outside cell {self.cell_id} bounds "
                    f"[{lat_lo},{lat_hi})x[{lon_lo},{lon_hi})")

    @property
    def n_days(self) -> int:
        return len(self.days)

    @property
    def n_soundings(self) -> int:
        return sum(d.n for d in self.days)

    @property
    def t(self) -> np.ndarray:
        return np.array([d.t for d in self.days], dtype=np.float64)

    def all_soundings(self) -> np.ndarray:
        """Concatenate the soundings of every overpass day."""
        if not self.days:
            return np.empty(0, dtype=SOUNDING_DTYPE)
        return np.concatenate([d.soundings for d in self.days])


@dataclass
class SeasonalCoefficients:
    """Coefficients of the seasonal mean: vertical shift, intercept, trend,
    and K pairs of sine/cosine harmonics."""

    a: float                              # vertical shift, in (-1, 1)
    beta0: float                          # intercept
    beta1: float                          # trend per day
    beta2: np.ndarray                     # sine coefficients, length K
    beta3: np.ndarray                     # cosine coefficients, length K

    def __post_init__(self):
        self.beta2 = np.asarray(self.beta2, dtype=np.float64)
        self.beta3 = np.asarray(self.beta3, dtype=np.float64)
        if not -1.0 < self.a < 1.0:
            raise ValueError(f"vertical shift must lie in (-1, 1), got {self.a}")
        if self.beta2.shape != self.beta3.shape or self.beta2.ndim != 1:
            raise ValueError("beta2 and beta3 must be 1-d arrays of equal length")
        if len(self.beta2) < 1:
            raise ValueError("at least one harmonic is required")

    @property
    def K(self) -> int:
        return len(self.beta2)

    def coef_vector(self) -> np.ndarray:
        """Stack [beta0, beta1, beta2_1, beta3_1, ..., beta2_K, beta3_K] in
        the order of :func:`fourier_basis` columns."""
        out = np.empty(2 + 2 * self.K)
        out[0] = self.beta0
        out[1] = self.beta1
        out[2::2] = self.beta2
        out[3::2] = self.beta3
        return out

    @classmethod
    def from_vector(cls, a: float, vec) -> "SeasonalCoefficients":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(a=a, beta0=float(vec[0]), beta1=float(vec[1]),
                   beta2=vec[2::2].copy(), beta3=vec[3::2].copy())


@dataclass
class VarianceState:
    """Variance parameters: per-day within-cell spatial variance ``nu``
    (aligned with the sorted overpass days) and the intraseasonal variance
    ``delta`` of the daily mean around the seasonal cycle."""

    nu: np.ndarray
    delta: float

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=np.float64)
        if np.any(self.nu <= 0):
            raise ValueError("all within-cell variances must be > 0")
        if not self.delta > 0:
            raise ValueError(f"intraseasonal variance must be > 0, got {self.delta}")


@dataclass
class LatentState:
    """Latent process values: ``x`` holds the daily 1-degree mean SIF (one
    entry per overpass day, in day order) and ``y`` the noise-free
    sounding-level SIF (one array per day)."""

    x: np.ndarray
    y: list

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = [np.asarray(v, dtype=np.float64) for v in self.y]
        if len(self.y) != len(self.x):
            raise ValueError("x and y must have one entry per overpass day")


@dataclass
class SeasonalPriorSpec:
    """Per-cell priors: normal (mean, variance) pairs for every seasonal
    coefficient, bounds of the uniform vertical-shift prior, and the rate of
    the exponential prior placed on the precisions 1/nu_t and 1/delta.

    ``flag`` records provenance: 0 fitted from dense data, 1 fitted but with
    posterior mass piling at the coefficient bounds, 2 global default.
    """

    b0: float
    s0: float
    b1: float
    s1: float
    b2: np.ndarray
    s2: np.ndarray
    b3: np.ndarray
    s3: np.ndarray
    a_bounds: tuple[float, float] = (-1.0, 1.0)
    precision_rate: float = 1.0
    flag: int = 0

    def __post_init__(self):
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        self.s2 = np.asarray(self.s2, dtype=np.float64)
        self.b3 = np.asarray(self.b3, dtype=np.float64)
        self.s3 = np.asarray(self.s3, dtype=np.float64)
        if not (self.b2.shape == self.s2.shape == self.b3.shape == self.s3.shape):
            raise ValueError("harmonic prior arrays must share one length")
        if self.s0 <= 0 or self.s1 <= 0 or np.any(self.s2 <= 0) or np.any(self.s3 <= 0):
            raise ValueError("all prior variances must be > 0")
        if not self.precision_rate > 0:
            raise ValueError("precision_rate must be > 0")
        if not self.a_bounds[0] < self.a_bounds[1]:
            raise ValueError("a_bounds must satisfy lower < upper")

    @property
    def K(self) -> int:
        return len(self.b2)

    def mean_vector(self) -> np.ndarray:
        out = np.empty(2 + 2 * self.K)
        out[0] = self.b0
        out[1] = self.b1
        out[2::2] = self.b2
        out[3::2] = self.b3
        return out

    def var_vector(self) -> np.ndarray:
        out = np.empty(2 + 2 * self.K)
        out[0] = self.s0
        out[1] = self.s1
        out[2::2] = self.s2
        out[3::2] = self.s3
        return out

    @classmethod
    def from_vectors(cls, mean, var, **kw) -> "SeasonalPriorSpec":
        mean = np.asarray(mean, dtype=np.float64)
        var = np.asarray(var, dtype=np.float64)
        return cls(b0=float(mean[0]), s0=float(var[0]),
                   b1=float(mean[1]), s1=float(var[1]),
                   b2=mean[2::2].copy(), s2=var[2::2].copy(),
                   b3=mean[3::2].copy(), s3=var[3::2].copy(), **kw)

    @classmethod
    def default(cls, harmonics: int = 2, flag: int = 2) -> "SeasonalPriorSpec":
        """Vague global fallback used where no dense-data fit exists:
        zero-mean coefficients with variance 0.25."""
        k = harmonics
        return cls(b0=0.0, s0=0.25, b1=0.0, s1=0.25,
                   b2=np.zeros(k), s2=np.full(k, 0.25),
                   b3=np.zeros(k), s3=np.full(k, 0.25), flag=flag)


def fourier_basis(t, harmonics: int = 2) -> np.ndarray:
    """Seasonal regression row(s) for fractional day-of-year ``t``.

    Returns ``[1, t, sin(2*pi*t/365.25), cos(2*pi*t/365.25), ...,
    sin(2*K*pi*t/365.25), cos(2*K*pi*t/365.25)]`` in this fixed order.
    A scalar ``t`` yields a vector of length ``2 + 2K``; an array of days
    yields the stacked design matrix.
    """
    if not isinstance(harmonics, (int, np.integer)) or harmonics < 1:
        raise ValueError(f"harmonics must be an integer >= 1, got {harmonics}")
    t_arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t_arr)):
        raise ValueError("day-of-year values must be finite")
    out = np.empty(t_arr.shape + (2 + 2 * harmonics,))
    out[..., 0] = 1.0
    out[..., 1] = t_arr
    for k in range(1, harmonics + 1):
        ang = (2.0 * k * np.pi / FOURIER_PERIOD_DAYS) * t_arr
        out[..., 2 * k] = np.sin(ang)
        out[..., 2 * k + 1] = np.cos(ang)
    return out


def seasonal_mean(coeffs: SeasonalCoefficients, t):
    """Seasonal mean SIF at day ``t``: the vertical shift plus the dot
    product of the coefficient vector with the Fourier basis row."""
    basis = fourier_basis(t, coeffs.K)
    return coeffs.a + basis @ coeffs.coef_vector()


def _norm_logpdf(x, mean, var):
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)


def _exp_logpdf(x, rate):
    return math.log(rate) - rate * x


def log_joint(data: CellYearDataset, latent: LatentState,
              coeffs: SeasonalCoefficients, variances: VarianceState,
              prior: SeasonalPriorSpec) -> float:
    """Log of the unnormalized posterior density of the full hierarchy.

    Sums the retrieval, within-cell and seasonal Gaussian stages with the
    log priors: normal on each seasonal coefficient, uniform on the vertical
    shift (-inf outside its bounds), and exponential on the precisions
    1/nu_t and 1/delta evaluated in precision space.
    """
    T = data.n_days
    if len(latent.x) != T or len(variances.nu) != T:
        raise ValueError("latent state and variances must align with the overpass days")
    lo, hi = prior.a_bounds
    if not lo < coeffs.a < hi:
        return -math.inf
    if np.any(variances.nu <= 0) or variances.delta <= 0:
        return -math.inf

    total = 0.0
    mu = seasonal_mean(coeffs, data.t)
    for k, day in enumerate(data.days):
        y_k = latent.y[k]
        if len(y_k) != day.n:
            raise ValueError(f"latent y for day {k} has wrong length")
        total += float(np.sum(_norm_logpdf(day.z, y_k, day.tau)))
        total += float(np.sum(_norm_logpdf(y_k, latent.x[k], variances.nu[k])))
    total += float(np.sum(_norm_logpdf(latent.x, mu, variances.delta)))

    total += float(np.sum(_norm_logpdf(coeffs.coef_vector(),
                                       prior.mean_vector(), prior.var_vector())))
    total += -math.log(hi - lo)
    rate = prior.precision_rate
    total += float(np.sum([_exp_logpdf(1.0 / v, rate) for v in variances.nu]))
    total += _exp_logpdf(1.0 / variances.delta, rate)
    return total


def simulate_cell_year(coeffs: SeasonalCoefficients, variances: VarianceState,
                       design, seed, *, cell_id: tuple[int, int] = (90, 180),
                       year: int = 2019) -> tuple[CellYearDataset, LatentState]:
    """Run the hierarchy forward; the testing oracle for the samplers.

    ``design`` is a sequence of ``(t, n_t, tau)`` with strictly increasing
    fractional days, per-day sounding counts, and retrieval variances (one
    shared scalar or one value per sounding).  Deterministic given ``seed``.
    """
    design = list(design)
    if not design:
        raise ValueError("design must contain at least one overpass day")
    if len(variances.nu) != len(design):
        raise ValueError("variances.nu must align with the design days")
    ts = [d[0] for d in design]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("design days must be strictly increasing")

    rng = np.random.default_rng(seed)
    lat, lon = cell_center(cell_id)
    t0 = year_start_epoch(year)
    days = []
    x = np.empty(len(design))
    y = []
    for k, (t, n, tau) in enumerate(design):
        if not 0.0 <= t < 366.0:
            raise ValueError(f"design day {t} outside [0, 366)")
        n = int(n)
        if n < 1:
            raise ValueError("each design day needs n_t >= 1")
        tau_arr = np.broadcast_to(np.asarray(tau, dtype=np.float64), (n,)).copy()
        if np.any(tau_arr <= 0):
            raise ValueError("retrieval variances must be > 0")
        mu = float(seasonal_mean(coeffs, t))
        x[k] = mu + math.sqrt(variances.delta) * rng.standard_normal()
        y_k = x[k] + math.sqrt(variances.nu[k]) * rng.standard_normal(n)
        z_k = y_k + np.sqrt(tau_arr) * rng.standard_normal(n)
        y.append(y_k)

        soundings = np.empty(n, dtype=SOUNDING_DTYPE)
        soundings["latitude"] = lat
        soundings["longitude"] = lon
        soundings["time"] = t0 + t * 86400.0
        soundings["day_of_year"] = t
        soundings["sif"] = z_k
        soundings["sif_variance"] = tau_arr
        soundings["quality_flag"] = QUALITY_BEST
        days.append(OverpassDay(t=float(t), soundings=soundings))

    dataset = CellYearDataset(cell_id=cell_id, year=year, days=days,
                              land_cover=10)
    return dataset, LatentState(x=x, y=y)
