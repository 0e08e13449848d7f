"""Shared construction helpers for the test suite."""

import numpy as np

from sifgrid import gibbs, model


def simple_coeffs(a=0.2, beta0=0.3, beta1=1e-4, harmonics=2):
    b2 = np.linspace(0.3, 0.1, harmonics)
    b3 = np.linspace(-0.2, 0.05, harmonics)
    return model.SeasonalCoefficients(a=a, beta0=beta0, beta1=beta1,
                                      beta2=b2, beta3=b3)


def random_coeffs(rng, harmonics=2):
    return model.SeasonalCoefficients(
        a=float(rng.uniform(-0.9, 0.9)),
        beta0=float(rng.normal(0, 0.5)),
        beta1=float(rng.normal(0, 1e-3)),
        beta2=rng.normal(0, 0.3, harmonics),
        beta3=rng.normal(0, 0.3, harmonics))


def simple_design(n_days=6, n_per_day=4, tau=0.02):
    t = np.linspace(10.5, 350.5, n_days)
    return [(float(tk), n_per_day, tau) for tk in t]


def simulated_packed(seed=0, n_days=6, n_per_day=4, nu=0.05, delta=0.01,
                     tau=0.02, coeffs=None, harmonics=2):
    """(packed data, dataset, latent, coeffs, variances) for a toy cell."""
    coeffs = coeffs or simple_coeffs(harmonics=harmonics)
    variances = model.VarianceState(nu=np.full(n_days, nu), delta=delta)
    design = simple_design(n_days, n_per_day, tau)
    dataset, latent = model.simulate_cell_year(coeffs, variances, design, seed)
    packed = gibbs.PackedCellData.from_cell_year(dataset, harmonics=harmonics)
    return packed, dataset, latent, coeffs, variances


def random_packed(rng, max_days=4, max_per_day=5, harmonics=2):
    """Small randomized instance for frozen-conditional checks."""
    T = int(rng.integers(1, max_days + 1))
    t = np.sort(rng.uniform(0, 365, T))
    z_by_day, tau_by_day = [], []
    for _ in range(T):
        n = int(rng.integers(1, max_per_day + 1))
        z_by_day.append(rng.normal(0, 1, n))
        tau_by_day.append(rng.uniform(0.005, 0.1, n))
    return gibbs.PackedCellData.from_days(t, z_by_day, tau_by_day,
                                          harmonics=harmonics)


def random_state(rng, data, delta_range=(0.02, 1.0)):
    """ChainState with randomized values, valid for any update op."""
    T, P, N = data.n_days, data.n_coefficients, data.n_soundings
    return gibbs.ChainState(
        y=rng.normal(0, 1, N),
        x=rng.normal(0, 1, T),
        beta=rng.normal(0, 0.3, P),
        a=float(rng.uniform(-0.8, 0.8)),
        nu=rng.uniform(0.02, 0.5, T),
        delta=float(rng.uniform(*delta_range)),
        iteration=0,
        rng=rng)


def random_prior(rng, harmonics=2):
    P = 2 + 2 * harmonics
    mean = rng.normal(0, 0.4, P)
    var = rng.uniform(0.01, 0.5, P)
    return model.SeasonalPriorSpec.from_vectors(mean, var)
