#!/usr/bin/env python3
"""Benchmark the compiled Gibbs kernel against the numpy fallback.

Times full-chain sampling over representative cell-year shapes (sparse
16-day-revisit cells up to dense daily-revisit cells) and prints iteration
throughput plus the speedup.  Run:

    python benchmarks/kernel_benchmark.py [--iterations 4000]
"""

import argparse
import time

import numpy as np

from sifgrid import gibbs, kernels, model

SHAPES = [
    ("sparse cell (12 days x 4)", 12, 4),
    ("revisit cell (23 days x 8)", 23, 8),
    ("dense cell (120 days x 10)", 120, 10),
    ("dense 2yr cell (365 days x 8)", 365, 8),
]


def make_packed(n_days: int, n_per_day: int, seed: int) -> gibbs.PackedCellData:
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0.0, 365.0, n_days))
    coeffs = model.SeasonalCoefficients(a=0.1, beta0=0.4, beta1=1e-4,
                                        beta2=[0.3, -0.1], beta3=[0.2, 0.05])
    mu = model.seasonal_mean(coeffs, t)
    z_by_day = [mu[k] + rng.normal(0.0, 0.3, n_per_day) for k in range(n_days)]
    tau_by_day = [rng.uniform(0.01, 0.05, n_per_day) for _ in range(n_days)]
    return gibbs.PackedCellData.from_days(t, z_by_day, tau_by_day)


def time_kernel(kernel_name: str, data, n_iterations: int) -> float:
    prior = model.SeasonalPriorSpec.default()
    config = gibbs.SamplerConfig(n_chains=1, n_iterations=n_iterations,
                                 n_burnin=n_iterations // 2, seed=7)
    # one warmup to amortize allocations and imports
    gibbs.sample_posterior(data, prior, config, kernel=kernel_name)
    start = time.perf_counter()
    gibbs.sample_posterior(data, prior, config, kernel=kernel_name)
    return time.perf_counter() - start


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--iterations", type=int, default=4000,
                        help="chain length per timing run")
    args = parser.parse_args()

    names = sorted(kernels.available())
    if "compiled" not in names:
        print("compiled kernel not built; timing the python kernel only")
    print(f"active kernel: {'compiled' if kernels.using_compiled() else 'python'}")
    print(f"{'shape':<32}" + "".join(f"{n + ' it/s':>16}" for n in names)
          + (f"{'speedup':>10}" if len(names) == 2 else ""))
    for label, n_days, n_per_day in SHAPES:
        data = make_packed(n_days, n_per_day, seed=42)
        rates = {}
        for name in names:
            elapsed = time_kernel(name, data, args.iterations)
            rates[name] = args.iterations / elapsed
        line = f"{label:<32}" + "".join(f"{rates[n]:>16.0f}" for n in names)
        if len(names) == 2:
            line += f"{rates['compiled'] / rates['python']:>9.1f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
