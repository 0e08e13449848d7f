"""Process-pool worker functions for the acceptance suite.

Kept in an importable module so ProcessPoolExecutor can pickle them by
reference.  Each worker derives every random stream from the arguments it
receives, so results are independent of scheduling.
"""

import math

import numpy as np
import scipy.stats as st

from sifgrid import gibbs, model

DRAWS = 100_000

# ---------------------------------------------------------------------------
# Conditional-correctness suite
# ---------------------------------------------------------------------------


def _random_case(seed):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    T = int(rng.integers(1, 4))
    t = np.sort(rng.uniform(0, 365, T))
    z_by_day, tau_by_day = [], []
    for _ in range(T):
        n = int(rng.integers(1, 4))
        z_by_day.append(rng.normal(0, 1, n))
        tau_by_day.append(rng.uniform(0.01, 0.2, n))
    data = gibbs.PackedCellData.from_days(t, z_by_day, tau_by_day)
    beta = rng.normal(0, 0.3, 6)
    beta[1] = rng.normal(0, 1e-3)  # trend per day at a physical scale
    state = gibbs.ChainState(
        y=rng.normal(0, 1, data.n_soundings),
        x=rng.normal(0, 1, T),
        beta=beta,
        a=float(rng.uniform(-0.8, 0.8)),
        nu=rng.uniform(0.02, 0.5, T),
        delta=float(rng.uniform(0.02, 1.0)),
        iteration=0,
        rng=np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                         spawn_key=(1,))))
    prior = model.SeasonalPriorSpec.from_vectors(rng.normal(0, 0.4, 6),
                                                 rng.uniform(0.01, 0.5, 6))
    return data, state, prior


def _check_moments(draws, mean, var, mu4, label):
    """4 Monte-Carlo-standard-error agreement of empirical mean/variance."""
    R = draws.shape[0]
    failures = []
    se_mean = np.sqrt(var / R)
    se_var = np.sqrt(np.maximum(mu4 - var ** 2, 0) / R)
    dm = np.abs(draws.mean(axis=0) - mean)
    dv = np.abs(draws.var(axis=0, ddof=1) - var)
    for q in np.flatnonzero(dm > 4 * se_mean):
        failures.append(f"{label}[{q}] mean off by {dm[q]:.3g} (4se={4*se_mean[q]:.3g})")
    for q in np.flatnonzero(dv > 4 * se_var):
        failures.append(f"{label}[{q}] var off by {dv[q]:.3g} (4se={4*se_var[q]:.3g})")
    return failures


def conditional_case(args):
    """One (update name, frozen state) cell of the conditional suite."""
    name, seed = args
    data, state, prior = _random_case(seed)
    T, N, P = data.n_days, data.n_soundings, 6
    counts = np.diff(data.offsets)
    day_of = np.repeat(np.arange(T), counts)
    R = DRAWS

    if name == "y":
        v = 1.0 / (1.0 / data.tau + 1.0 / state.nu[day_of])
        m = v * (data.z / data.tau + state.x[day_of] / state.nu[day_of])
        draws = np.empty((R, N))
        for r in range(R):
            draws[r] = gibbs.update_latent_y(state, data)
        return _check_moments(draws, m, v, 3 * v ** 2, "y")

    if name == "x":
        mu = state.a + data.F @ state.beta
        v = 1.0 / (counts / state.nu + 1.0 / state.delta)
        sums = np.bincount(day_of, weights=state.y, minlength=T)
        m = v * (sums / state.nu + mu / state.delta)
        draws = np.empty((R, T))
        for r in range(R):
            draws[r] = gibbs.update_x(state, data).copy()
        return _check_moments(draws, m, v, 3 * v ** 2, "x")

    if name == "beta":
        lam = data.FtF / state.delta + np.diag(1.0 / prior.var_vector())
        cov = np.linalg.inv(lam)
        m = cov @ (data.F.T @ (state.x - state.a) / state.delta
                   + prior.mean_vector() / prior.var_vector())
        v = np.diag(cov)
        draws = np.empty((R, P))
        for r in range(R):
            draws[r] = gibbs.update_betas(state, data, prior)
        return _check_moments(draws, m, v, 3 * v ** 2, "beta")

    if name == "a":
        fb = data.F @ state.beta
        m = float(np.mean(state.x - fb))
        sd = math.sqrt(state.delta / T)
        lo, hi = prior.a_bounds
        dist = st.truncnorm((lo - m) / sd, (hi - m) / sd, loc=m, scale=sd)
        mean, var, _, kurt = dist.stats(moments="mvsk")
        mu4 = (float(kurt) + 3.0) * float(var) ** 2
        draws = np.empty((R, 1))
        for r in range(R):
            draws[r, 0] = gibbs.update_a(state, data, prior)
        return _check_moments(draws, np.array([float(mean)]),
                              np.array([float(var)]), np.array([mu4]), "a")

    if name == "nu":
        resid = state.y - state.x[day_of]
        ss = np.bincount(day_of, weights=resid ** 2, minlength=T)
        k = 1.0 + 0.5 * counts
        rate = prior.precision_rate + 0.5 * ss
        m, v = k / rate, k / rate ** 2
        mu4 = 3 * k * (k + 2) / rate ** 4
        draws = np.empty((R, T))
        for r in range(R):
            gibbs.update_nu(state, data, prior)
            draws[r] = 1.0 / state.nu
        return _check_moments(draws, m, v, mu4, "1/nu")

    if name == "delta":
        mu = state.a + data.F @ state.beta
        ss = float(np.sum((state.x - mu) ** 2))
        k = 1.0 + 0.5 * T
        rate = prior.precision_rate + 0.5 * ss
        m, v = k / rate, k / rate ** 2
        mu4 = 3 * k * (k + 2) / rate ** 4
        draws = np.empty((R, 1))
        for r in range(R):
            gibbs.update_delta(state, data, prior)
            draws[r, 0] = 1.0 / state.delta
        return _check_moments(draws, np.array([m]), np.array([v]),
                              np.array([mu4]), "1/delta")

    raise ValueError(name)


# ---------------------------------------------------------------------------
# Simulation-based calibration and coverage
# ---------------------------------------------------------------------------

SBC_PRIOR_MEAN = np.array([0.3, 2e-4, 0.2, -0.1, 0.1, 0.05])
SBC_PRIOR_VAR = np.array([0.09, 2.5e-7, 0.04, 0.04, 0.04, 0.04])


def sbc_design(n_days=14, n_per_day=3, seed=555):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(5, 360, n_days))
    tau = [rng.uniform(0.005, 0.02, n_per_day) for _ in range(n_days)]
    return t, n_per_day, tau


def coverage_design(n_days=8, n_per_day=3, seed=777):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(5, 360, n_days))
    tau = [rng.uniform(0.004, 0.04, n_per_day) for _ in range(n_days)]
    return t, n_per_day, tau


def _draw_from_prior(rng, prior, n_days):
    a = float(rng.uniform(*prior.a_bounds))
    beta = rng.normal(prior.mean_vector(), np.sqrt(prior.var_vector()))
    nu = 1.0 / rng.exponential(1.0 / prior.precision_rate, n_days)
    delta = 1.0 / float(rng.exponential(1.0 / prior.precision_rate))
    return a, beta, nu, delta


def _simulate(rng, design, a, beta, nu, delta):
    t, n_per_day, tau = design
    coeffs = model.SeasonalCoefficients.from_vector(a, beta)
    variances = model.VarianceState(nu=nu, delta=delta)
    spec = [(float(tk), n_per_day, tau[k]) for k, tk in enumerate(t)]
    dataset, latent = model.simulate_cell_year(coeffs, variances, spec,
                                               seed=rng)
    return gibbs.PackedCellData.from_cell_year(dataset), latent


def sbc_batch(args):
    """SBC ranks of (a, beta0, beta2_1, delta) for a block of replicates."""
    start, count, base_seed = args
    prior = model.SeasonalPriorSpec.from_vectors(SBC_PRIOR_MEAN, SBC_PRIOR_VAR)
    design = sbc_design()
    config = gibbs.SamplerConfig(n_chains=1, n_iterations=3800, n_burnin=600,
                                 thin=160, seed=base_seed)
    ranks = np.empty((count, 4), dtype=np.int64)
    for k in range(count):
        rep = start + k
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=base_seed, spawn_key=(rep,)))
        a, beta, nu, delta = _draw_from_prior(rng, prior, len(design[0]))
        data, _ = _simulate(rng, design, a, beta, nu, delta)
        draws = gibbs.sample_posterior(data, prior, config, cell_key=(rep,))
        ranks[k, 0] = int(np.sum(draws.a[0] < a))
        ranks[k, 1] = int(np.sum(draws.beta[0, :, 0] < beta[0]))
        ranks[k, 2] = int(np.sum(draws.beta[0, :, 2] < beta[2]))
        ranks[k, 3] = int(np.sum(draws.delta[0] < delta))
    return ranks


def coverage_batch(args):
    """(hits, intervals) of the 95% credible intervals over replicates."""
    start, count, base_seed = args
    prior = model.SeasonalPriorSpec.from_vectors(SBC_PRIOR_MEAN, SBC_PRIOR_VAR)
    design = coverage_design()
    config = gibbs.SamplerConfig(n_chains=1, n_iterations=1800, n_burnin=600,
                                 seed=base_seed)
    hits = 0
    total = 0
    for k in range(count):
        rep = start + k
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=base_seed, spawn_key=(rep, 7)))
        a, beta, nu, delta = _draw_from_prior(rng, prior, len(design[0]))
        data, latent = _simulate(rng, design, a, beta, nu, delta)
        draws = gibbs.sample_posterior(data, prior, config, cell_key=(rep, 7))
        pooled = draws.x.reshape(-1, data.n_days)
        lo = np.quantile(pooled, 0.025, axis=0)
        hi = np.quantile(pooled, 0.975, axis=0)
        hits += int(np.sum((latent.x >= lo) & (latent.x <= hi)))
        total += data.n_days
    return hits, total


# ---------------------------------------------------------------------------
# Linear-Gaussian oracle instances
# ---------------------------------------------------------------------------


def linear_gaussian_case(seed):
    """Max |z-score| over all (beta, x) means and sds of one instance."""
    from oracles import joint_gaussian_posterior

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    T = int(rng.integers(1, 6))
    t = np.sort(rng.uniform(0, 365, T))
    z_by_day, tau_by_day = [], []
    budget = 20
    for k in range(T):
        n = int(rng.integers(1, min(4, budget - (T - k - 1)) + 1))
        budget -= n
        z_by_day.append(rng.normal(0.2, 0.6, n))
        tau_by_day.append(rng.uniform(0.01, 0.2, n))
    data = gibbs.PackedCellData.from_days(t, z_by_day, tau_by_day)
    prior = model.SeasonalPriorSpec.from_vectors(rng.normal(0, 0.4, 6),
                                                 rng.uniform(0.01, 0.5, 6))
    a = float(rng.uniform(-0.5, 0.5))
    nu = rng.uniform(0.05, 0.4, T)
    delta = float(rng.uniform(0.05, 0.5))

    mean, cov, sl = joint_gaussian_posterior(data, prior, a, nu, delta)
    config = gibbs.SamplerConfig(n_chains=3, n_iterations=3000, n_burnin=1000,
                                 seed=seed)
    draws = gibbs.sample_posterior(data, prior, config, fixed_a=a,
                                   fixed_nu=nu, fixed_delta=delta)
    worst = 0.0
    for name, arr in [("x", draws.x), ("beta", draws.beta)]:
        true_mean = mean[sl[name]]
        true_sd = np.sqrt(np.diag(cov)[sl[name]])
        pooled = arr.reshape(-1, arr.shape[2])
        for q in range(arr.shape[2]):
            ess = gibbs.ess_rank_normalized(arr[:, :, q])
            z_mean = abs(pooled[:, q].mean() - true_mean[q]) / \
                (true_sd[q] / math.sqrt(ess))
            z_sd = abs(pooled[:, q].std(ddof=1) - true_sd[q]) / \
                (true_sd[q] / math.sqrt(2 * ess))
            worst = max(worst, z_mean, z_sd)
    return worst
