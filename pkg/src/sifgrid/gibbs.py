"""Gibbs sampler for the hierarchical SIF model.

Every full conditional is conjugate: normals for the latent sounding values,
daily means and seasonal coefficients, truncated normals for bounded
coefficients, and gammas for the precisions.  One chain sweeps

    y -> x -> coefficients -> vertical shift -> nu -> delta

per iteration.  Chains for different cells and chain indices derive their
generators from (seed, cell key, chain index), so results are independent
of scheduling and worker count.  The sweep itself runs in the compiled
kernel when available (see ``kernels``).
"""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from . import kernels
from .model import (
    CellYearDataset,
    SeasonalPriorSpec,
    fourier_basis,
)


class IllConditionedDesignError(RuntimeError):
    """The seasonal regression precision matrix is numerically singular."""


def coefficient_names(harmonics: int) -> list[str]:
    """Names of the sampled seasonal coefficients, vertical shift first."""
    names = ["a", "beta0", "beta1"]
    for k in range(1, harmonics + 1):
        names += [f"beta2_{k}", f"beta3_{k}"]
    return names


@dataclass
class SamplerConfig:
    """Chain settings.  Defaults are sized for desk-scale convergence with
    the diagnostics acting as the safety net."""

    n_chains: int = 3
    n_iterations: int = 5000
    n_burnin: int = 2000
    thin: int = 1
    seed: int = 0
    rhat_threshold: float = 1.05
    ess_threshold: float = 400.0

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not 0 <= self.n_burnin < self.n_iterations:
            raise ValueError("need 0 <= n_burnin < n_iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a non-negative 64-bit integer")
        if self.rhat_threshold <= 0 or self.ess_threshold <= 0:
            raise ValueError("diagnostic thresholds must be > 0")

    @property
    def n_retained_per_chain(self) -> int:
        return 1 + (self.n_iterations - self.n_burnin - 1) // self.thin

    def digest(self) -> str:
        """Stable hash of the settings, recorded in product metadata."""
        payload = json.dumps(self.__dict__, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass
class PackedCellData:
    """Flat arrays consumed by the sampler kernels.

    Soundings are stored day-major: day t owns ``z[offsets[t]:offsets[t+1]]``.
    ``F`` stacks the Fourier basis rows of the overpass days and ``FtF`` is
    precomputed once so both kernel implementations share it bit for bit.
    """

    t: np.ndarray          # (T,) fractional day-of-year
    F: np.ndarray          # (T, P) seasonal design
    FtF: np.ndarray        # (P, P)
    z: np.ndarray          # (N,) retrieved SIF
    tau: np.ndarray        # (N,) retrieval error variances
    offsets: np.ndarray    # (T+1,) int64 day boundaries into z/tau

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=np.float64)
        self.F = np.ascontiguousarray(self.F, dtype=np.float64)
        self.FtF = np.ascontiguousarray(self.FtF, dtype=np.float64)
        self.z = np.ascontiguousarray(self.z, dtype=np.float64)
        self.tau = np.ascontiguousarray(self.tau, dtype=np.float64)
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        T = len(self.t)
        if self.F.shape[0] != T or len(self.offsets) != T + 1:
            raise ValueError("design and offsets must align with the days")
        if self.offsets[0] != 0 or self.offsets[-1] != len(self.z):
            raise ValueError("offsets must start at 0 and end at the sounding count")
        if np.any(np.diff(self.offsets) < 0):
            raise ValueError("offsets must be non-decreasing")
        if len(self.tau) != len(self.z):
            raise ValueError("z and tau must have equal length")
        if np.any(self.tau <= 0):
            raise ValueError("retrieval variances must be > 0")

    @property
    def n_days(self) -> int:
        return len(self.t)

    @property
    def n_soundings(self) -> int:
        return len(self.z)

    @property
    def n_coefficients(self) -> int:
        return self.F.shape[1]

    @property
    def harmonics(self) -> int:
        return (self.F.shape[1] - 2) // 2

    @classmethod
    def from_days(cls, t, z_by_day, tau_by_day, harmonics: int = 2) -> "PackedCellData":
        t = np.asarray(t, dtype=np.float64)
        z = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in z_by_day]
        tau = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in tau_by_day]
        counts = [len(v) for v in z]
        offsets = np.zeros(len(t) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        F = fourier_basis(t, harmonics) if len(t) else np.zeros((0, 2 + 2 * harmonics))
        return cls(t=t, F=F, FtF=F.T @ F,
                   z=np.concatenate(z) if z else np.empty(0),
                   tau=np.concatenate(tau) if tau else np.empty(0),
                   offsets=offsets)

    @classmethod
    def from_cell_year(cls, dataset: CellYearDataset, harmonics: int = 2) -> "PackedCellData":
        return cls.from_days(dataset.t,
                             [d.z for d in dataset.days],
                             [d.tau for d in dataset.days],
                             harmonics=harmonics)


@dataclass
class ChainState:
    """Mutable joint state of one chain: latent values, coefficients,
    variances, the iteration counter, and the chain's generator."""

    y: np.ndarray
    x: np.ndarray
    beta: np.ndarray
    a: float
    nu: np.ndarray
    delta: float
    iteration: int
    rng: np.random.Generator


def init_chain_state(data: PackedCellData, prior: SeasonalPriorSpec,
                     rng: np.random.Generator, *, beta_prior: str = "normal",
                     fixed_a=None, fixed_nu=None, fixed_delta=None) -> ChainState:
    """Deterministic starting point in the bulk of the posterior:
    coefficients at their prior means (zero under uniform priors), unit
    variances, daily means at the precision-weighted sounding averages, and
    latent sounding values at the retrievals."""
    P = data.n_coefficients
    T = data.n_days
    beta = prior.mean_vector().copy() if beta_prior == "normal" else np.zeros(P)
    a = 0.0 if fixed_a is None else float(fixed_a)
    if fixed_nu is None:
        nu = np.ones(T)
    else:
        nu = np.broadcast_to(np.asarray(fixed_nu, dtype=np.float64), (T,)).copy()
    delta = 1.0 if fixed_delta is None else float(fixed_delta)

    counts = np.diff(data.offsets)
    day = np.repeat(np.arange(T), counts)
    w = 1.0 / data.tau
    wsum = np.bincount(day, weights=w, minlength=T)
    wz = np.bincount(day, weights=w * data.z, minlength=T)
    x = a + data.F @ beta
    nonempty = wsum > 0
    x[nonempty] = wz[nonempty] / wsum[nonempty]

    return ChainState(y=data.z.copy(), x=x, beta=beta, a=a, nu=nu,
                      delta=delta, iteration=0, rng=rng)


# ---------------------------------------------------------------------------
# Full-conditional updates at the ChainState level.  Each call redraws one
# block in place and leaves everything it conditions on untouched, so
# repeated calls sample the same frozen conditional.
# ---------------------------------------------------------------------------

def update_latent_y(state: ChainState, data: PackedCellData, kernel=None):
    """Redraw every noise-free sounding value Y given data and daily means."""
    k = kernels.resolve(kernel)
    k.update_y(state.rng, data.z, data.tau, data.offsets, state.x, state.nu, state.y)
    return state.y


def update_x(state: ChainState, data: PackedCellData, kernel=None):
    """Redraw every daily mean X given the soundings and the seasonal mean."""
    k = kernels.resolve(kernel)
    mu = state.a + data.F @ state.beta
    k.update_x(state.rng, data.offsets, state.y, state.nu, mu, state.delta, state.x)
    return state.x


def update_betas(state: ChainState, data: PackedCellData,
                 prior: SeasonalPriorSpec, kernel=None):
    """Redraw the seasonal coefficient vector from its joint normal
    conditional under the normal priors."""
    k = kernels.resolve(kernel)
    try:
        k.update_beta_normal(state.rng, data.F, data.FtF, state.x, state.a,
                             state.delta, prior.mean_vector(), prior.var_vector(),
                             state.beta)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedDesignError(
            f"cannot draw seasonal coefficients: {exc}") from exc
    return state.beta


def update_betas_bounded(state: ChainState, data: PackedCellData,
                         bounds: tuple[float, float] = (-1.0, 1.0), kernel=None):
    """Redraw each coefficient from its truncated-normal conditional under
    independent uniform priors (the dense-data hyperparameter fit)."""
    k = kernels.resolve(kernel)
    fb = data.F @ state.beta
    k.update_beta_uniform(state.rng, data.F, state.x, state.a, state.delta,
                          bounds[0], bounds[1], state.beta, fb)
    return state.beta


def update_a(state: ChainState, data: PackedCellData,
             prior: SeasonalPriorSpec, kernel=None):
    """Redraw the vertical shift from its truncated-normal conditional."""
    k = kernels.resolve(kernel)
    fb = data.F @ state.beta
    lo, hi = prior.a_bounds
    state.a = k.update_a(state.rng, state.x, fb, state.delta, lo, hi)
    return state.a


def update_nu(state: ChainState, data: PackedCellData,
              prior: SeasonalPriorSpec | None = None, kernel=None):
    """Redraw each day's within-cell precision from its gamma conditional."""
    k = kernels.resolve(kernel)
    rate = prior.precision_rate if prior is not None else 1.0
    k.update_nu(state.rng, data.offsets, state.y, state.x, rate, state.nu)
    return state.nu


def update_delta(state: ChainState, data: PackedCellData,
                 prior: SeasonalPriorSpec | None = None, kernel=None):
    """Redraw the intraseasonal precision from its gamma conditional."""
    k = kernels.resolve(kernel)
    rate = prior.precision_rate if prior is not None else 1.0
    mu = state.a + data.F @ state.beta
    state.delta = k.update_delta(state.rng, state.x, mu, rate)
    return state.delta


# ---------------------------------------------------------------------------
# Chain execution and posterior summarization.
# ---------------------------------------------------------------------------

@dataclass
class ChainDraws:
    """Retained draws of every chain: daily means, coefficients, vertical
    shift and intraseasonal variance; optionally the per-day variances and
    latent sounding values."""

    t: np.ndarray            # (T,)
    x: np.ndarray            # (n_chains, L, T)
    beta: np.ndarray         # (n_chains, L, P)
    a: np.ndarray            # (n_chains, L)
    delta: np.ndarray        # (n_chains, L)
    nu: np.ndarray | None = None   # (n_chains, L, T)
    y: np.ndarray | None = None    # (n_chains, L, N)

    @property
    def n_chains(self) -> int:
        return self.x.shape[0]

    @property
    def n_retained(self) -> int:
        return self.x.shape[0] * self.x.shape[1]

    @property
    def harmonics(self) -> int:
        return (self.beta.shape[2] - 2) // 2

    @property
    def coef_names(self) -> list[str]:
        return coefficient_names(self.harmonics)

    def coef_draws(self) -> np.ndarray:
        """Coefficient draws as (n_chains, L, 1 + P), vertical shift first."""
        return np.concatenate([self.a[:, :, None], self.beta], axis=2)


def sample_posterior(data: PackedCellData, prior: SeasonalPriorSpec,
                     config: SamplerConfig, *, cell_key: tuple = (),
                     beta_prior: str = "normal",
                     beta_bounds: tuple[float, float] = (-1.0, 1.0),
                     fixed_a=None, fixed_nu=None, fixed_delta=None,
                     store_nu: bool = False, store_y: bool = False,
                     kernel=None) -> ChainDraws:
    """Run all configured chains and return the retained draws.

    ``cell_key`` is mixed with the seed and the chain index into each
    chain's generator, making results reproducible and independent of how
    cells are scheduled over workers.  ``fixed_*`` pin a block to a constant
    instead of sampling it.  ``beta_prior`` selects the normal-prior joint
    update or the bounded-uniform per-coefficient update.
    """
    if beta_prior not in ("normal", "uniform"):
        raise ValueError(f"unknown beta_prior {beta_prior!r}")
    if data.n_days < 1:
        raise ValueError("dataset has no overpass days")
    if prior.K != data.harmonics:
        raise ValueError("prior and design disagree on the harmonic count")
    k = kernels.resolve(kernel)

    T, P, N = data.n_days, data.n_coefficients, data.n_soundings
    L = config.n_retained_per_chain
    m = config.n_chains
    mode = kernels.BETA_NORMAL if beta_prior == "normal" else kernels.BETA_UNIFORM
    prior_mean = prior.mean_vector() if beta_prior == "normal" else np.zeros(P)
    prior_var = prior.var_vector() if beta_prior == "normal" else np.ones(P)
    a_lo, a_hi = prior.a_bounds

    out_x = np.empty((m, L, T))
    out_beta = np.empty((m, L, P))
    out_a = np.empty((m, L))
    out_delta = np.empty((m, L))
    out_nu = np.empty((m, L, T)) if store_nu else None
    out_y = np.empty((m, L, N)) if store_y else None
    empty2 = np.empty((0, 0))

    for c in range(m):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=config.seed,
                                   spawn_key=tuple(cell_key) + (c,)))
        state = init_chain_state(data, prior, rng, beta_prior=beta_prior,
                                 fixed_a=fixed_a, fixed_nu=fixed_nu,
                                 fixed_delta=fixed_delta)
        a_box = np.array([state.a])
        delta_box = np.array([state.delta])
        k.sample_chain(rng, data.z, data.tau, data.offsets, data.F, data.FtF,
                       prior_mean, prior_var, a_lo, a_hi, prior.precision_rate,
                       mode, beta_bounds[0], beta_bounds[1],
                       int(fixed_a is None), int(fixed_nu is None),
                       int(fixed_delta is None),
                       state.y, state.x, state.beta, a_box, state.nu, delta_box,
                       config.n_iterations, config.n_burnin, config.thin,
                       out_x[c], out_beta[c], out_a[c], out_delta[c],
                       out_nu[c] if store_nu else empty2,
                       out_y[c] if store_y else empty2)

    return ChainDraws(t=data.t.copy(), x=out_x, beta=out_beta, a=out_a,
                      delta=out_delta, nu=out_nu, y=out_y)


@dataclass
class PosteriorSummary:
    """Per-day posterior summaries of the daily mean SIF plus coefficient
    moments and convergence diagnostics."""

    t: np.ndarray
    x_mean: np.ndarray
    x_sd: np.ndarray
    x_q2_5: np.ndarray
    x_q97_5: np.ndarray
    coef_names: list[str]
    coef_mean: np.ndarray
    coef_var: np.ndarray
    rhat_x: np.ndarray
    ess_x: np.ndarray
    rhat_coef: np.ndarray
    ess_coef: np.ndarray
    converged: bool
    n_retained: int


def _split_halves(chains: np.ndarray) -> np.ndarray:
    """Split each chain into halves, dropping the middle draw if odd."""
    n = chains.shape[1]
    h = n // 2
    return np.concatenate([chains[:, :h], chains[:, n - h:]], axis=0)


def split_rhat(chains) -> float:
    """Potential scale reduction factor over split half-chains.

    Chains with no variance anywhere are reported as exactly 1 (trivially
    converged); zero within-chain variance with distinct half-chain means
    yields +inf.
    """
    c = np.atleast_2d(np.asarray(chains, dtype=np.float64))
    s = _split_halves(c)
    m, n = s.shape
    if n < 2:
        return math.nan
    means = s.mean(axis=1)
    within = s.var(axis=1, ddof=1).mean()
    between_over_n = means.var(ddof=1)
    var_plus = (n - 1) / n * within + between_over_n
    if var_plus == 0.0:
        return 1.0
    if within == 0.0:
        return math.inf
    return math.sqrt(var_plus / within)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average", axis=None).reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _autocovariance(chains: np.ndarray) -> np.ndarray:
    """Per-chain autocovariance at all lags (biased, divisor n), via FFT."""
    m, n = chains.shape
    centered = chains - chains.mean(axis=1, keepdims=True)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :n]
    return acov / n


def ess_rank_normalized(chains) -> float:
    """Bulk effective sample size on rank-normalized split half-chains,
    with Geyer's initial monotone positive sequence truncation."""
    c = np.atleast_2d(np.asarray(chains, dtype=np.float64))
    s = _split_halves(c)
    m, n = s.shape
    if n < 4:
        return math.nan
    if np.all(s == s.flat[0]):
        return float(m * n)
    z = _rank_normalize(s)

    acov = _autocovariance(z)
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n + z.mean(axis=1).var(ddof=1)
    if var_plus == 0.0:
        return float(m * n)

    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and (rho_even + rho_odd) > 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0.0:
        rho[max_t + 1] = rho_even
    # enforce monotone non-increasing paired sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    tau = -1.0 + 2.0 * float(np.sum(rho[:max_t + 1])) + float(rho[max_t + 1])
    tau = max(tau, 1.0 / math.log10(max(m * n, 10)))
    ess = m * n / tau
    return float(min(ess, m * n))


def diagnostics(chains) -> tuple[float, float]:
    """(split R-hat, rank-normalized ESS) for one scalar quantity sampled
    as an (n_chains, n_draws) array."""
    return split_rhat(chains), ess_rank_normalized(chains)


def summarize(draws: ChainDraws, *, rhat_threshold: float = 1.05,
              ess_threshold: float = 400.0) -> PosteriorSummary:
    """Pool the retained draws into the posterior product summaries.

    Means and standard deviations use the n-1 divisor; the 2.5/97.5%
    quantiles use linear interpolation between order statistics.  R-hat and
    ESS are computed per daily mean and per coefficient; ``converged``
    flags whether every quantity clears both thresholds.
    """
    m, L, T = draws.x.shape
    if m * L < 10:
        raise ValueError(f"need at least 10 retained draws, have {m * L}")

    pooled_x = draws.x.reshape(m * L, T)
    x_mean = pooled_x.mean(axis=0)
    x_sd = pooled_x.std(axis=0, ddof=1)
    q = np.quantile(pooled_x, [0.025, 0.975], axis=0)

    coef = draws.coef_draws()                     # (m, L, 1 + P)
    pooled_coef = coef.reshape(m * L, -1)
    coef_mean = pooled_coef.mean(axis=0)
    coef_var = pooled_coef.var(axis=0, ddof=1)

    rhat_x = np.array([split_rhat(draws.x[:, :, j]) for j in range(T)])
    ess_x = np.array([ess_rank_normalized(draws.x[:, :, j]) for j in range(T)])
    n_coef = coef.shape[2]
    rhat_coef = np.array([split_rhat(coef[:, :, j]) for j in range(n_coef)])
    ess_coef = np.array([ess_rank_normalized(coef[:, :, j]) for j in range(n_coef)])

    all_rhat = np.concatenate([rhat_x, rhat_coef])
    all_ess = np.concatenate([ess_x, ess_coef])
    converged = (bool(np.all(np.isfinite(all_rhat)))
                 and bool(np.all(all_rhat <= rhat_threshold))
                 and bool(np.all(np.isfinite(all_ess)))
                 and bool(np.all(all_ess >= ess_threshold)))

    return PosteriorSummary(
        t=draws.t.copy(), x_mean=x_mean, x_sd=x_sd,
        x_q2_5=q[0], x_q97_5=q[1],
        coef_names=draws.coef_names, coef_mean=coef_mean, coef_var=coef_var,
        rhat_x=rhat_x, ess_x=ess_x, rhat_coef=rhat_coef, ess_coef=ess_coef,
        converged=converged, n_retained=m * L)


def run_chain(data, prior: SeasonalPriorSpec, config: SamplerConfig, *,
              cell_key: tuple = (), beta_prior: str = "normal",
              kernel=None) -> PosteriorSummary:
    """Sample the posterior for one cell-year and summarize it.

    ``data`` may be a ``CellYearDataset`` or an already packed
    ``PackedCellData``.  Non-convergence is advisory: the summary is always
    returned with ``converged`` set accordingly.
    """
    if isinstance(data, CellYearDataset):
        data = PackedCellData.from_cell_year(data, harmonics=prior.K)
    draws = sample_posterior(data, prior, config, cell_key=cell_key,
                             beta_prior=beta_prior, kernel=kernel)
    return summarize(draws, rhat_threshold=config.rhat_threshold,
                     ess_threshold=config.ess_threshold)
