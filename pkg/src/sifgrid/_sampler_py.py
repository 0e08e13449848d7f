"""Numpy implementation of the Gibbs update kernels.

This is the fallback selected when the compiled extension is unavailable.
Both implementations draw from the numpy ``Generator`` through the same
underlying routines in the same order, so for a given bit-generator state
they consume identical random streams; results differ only by floating
point reduction order (summation, BLAS) at the last few ulps.

All updates are full conditionals of the hierarchy in ``model``:

* ``update_y``      noise-free sounding SIF given data and daily means
* ``update_x``      daily 1-degree means given soundings and seasonal mean
* ``update_beta_*`` seasonal coefficients (joint normal or per-coefficient
                    truncated normal under bounded uniform priors)
* ``update_a``      bounded vertical shift (truncated normal)
* ``update_nu``     per-day within-cell precisions (gamma)
* ``update_delta``  intraseasonal precision (gamma)
"""

import math

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr, ndtri

COMPILED = False

# beta_mode values understood by sample_chain
BETA_NORMAL = 0
BETA_UNIFORM = 1


def _trunc_normal(rng, m, sd, lo, hi):
    """Inverse-CDF draw from N(m, sd^2) truncated to (lo, hi).

    Reflects right-of-mean intervals into the left tail where the normal
    CDF keeps full precision; consumes exactly one uniform.  Always returns
    a value strictly inside (lo, hi).
    """
    u = rng.random()
    a = (lo - m) / sd
    b = (hi - m) / sd
    if a > 0.0:
        p = ndtr(-b)
        q = ndtr(-a)
        xs = -ndtri(p + u * (q - p)) if q > p else a
    else:
        p = ndtr(a)
        q = ndtr(b)
        xs = ndtri(p + u * (q - p)) if q > p else b
    x = m + sd * xs
    if x <= lo:
        x = math.nextafter(lo, hi)
    elif x >= hi:
        x = math.nextafter(hi, lo)
    return x


def update_y(rng, z, tau, offsets, x, nu, y):
    """Draw every noise-free sounding value from its normal conditional.

    For sounding i on day t: variance 1/(1/tau_it + 1/nu_t), mean the
    precision-weighted combination of the retrieval and the daily mean.
    """
    counts = np.diff(offsets)
    inv_nu = np.repeat(1.0 / nu, counts)
    x_rep = np.repeat(x, counts)
    v = 1.0 / (1.0 / tau + inv_nu)
    m = v * (z / tau + x_rep * inv_nu)
    y[:] = m + np.sqrt(v) * rng.standard_normal(len(y))


def update_x(rng, offsets, y, nu, mu, delta, x):
    """Draw every daily mean from its normal conditional.

    For day t with n_t soundings: variance 1/(n_t/nu_t + 1/delta), mean the
    precision-weighted combination of the sounding average and the seasonal
    mean.  A day with no soundings reduces to N(mu_t, delta).
    """
    T = len(x)
    counts = np.diff(offsets)
    day = np.repeat(np.arange(T), counts)
    sums = np.bincount(day, weights=y, minlength=T)
    v = 1.0 / (counts / nu + 1.0 / delta)
    m = v * (sums / nu + mu / delta)
    x[:] = m + np.sqrt(v) * rng.standard_normal(T)


def update_beta_normal(rng, F, FtF, x, a, delta, prior_mean, prior_var, beta):
    """Joint multivariate-normal draw of the seasonal coefficients.

    Posterior precision ``F'F/delta + diag(1/s)``; an empty design (no
    days) degenerates to a draw from the prior.  Raises
    ``numpy.linalg.LinAlgError`` when the precision is not positive
    definite (degenerate duplicate-day designs).
    """
    P = len(beta)
    inv_s = 1.0 / prior_var
    lam = FtF / delta + np.diag(inv_s)
    rhs = F.T @ (x - a) / delta + prior_mean * inv_s
    L = np.linalg.cholesky(lam)
    mean = solve_triangular(L.T, solve_triangular(L, rhs, lower=True), lower=False)
    zb = rng.standard_normal(P)
    beta[:] = mean + solve_triangular(L.T, zb, lower=False)


def update_beta_uniform(rng, F, x, a, delta, lo, hi, beta, fb):
    """Per-coefficient truncated-normal sweep under Unif(lo, hi) priors.

    Used when fitting dense data to extract prior hyperparameters.  ``fb``
    must hold F @ beta on entry and is kept current as coefficients change.
    A coefficient whose basis column carries no information (zero norm or
    empty design) is drawn from its uniform prior; either branch consumes
    exactly one uniform.
    """
    T, P = F.shape
    for j in range(P):
        col = F[:, j]
        csq = float(col @ col)
        if csq > 0.0:
            resid = x - a - fb + col * beta[j]
            m = float(col @ resid) / csq
            sd = math.sqrt(delta / csq)
            new = _trunc_normal(rng, m, sd, lo, hi)
        else:
            new = lo + rng.random() * (hi - lo)
        fb += col * (new - beta[j])
        beta[j] = new


def update_a(rng, x, fb, delta, lo, hi):
    """Truncated-normal draw of the vertical shift.

    The unconstrained conditional has mean equal to the average residual of
    the daily means after removing all other seasonal terms and variance
    delta/T; with no days it falls back to the uniform prior.
    """
    T = len(x)
    if T == 0:
        return lo + rng.random() * (hi - lo)
    m = float(np.mean(x - fb))
    sd = math.sqrt(delta / T)
    return _trunc_normal(rng, m, sd, lo, hi)


def update_nu(rng, offsets, y, x, rate, nu):
    """Gamma draw of each day's within-cell precision 1/nu_t with shape
    ``1 + n_t/2`` and rate ``rate + ss_t/2`` (ss_t the squared residual sum
    of that day's soundings around the daily mean)."""
    T = len(x)
    counts = np.diff(offsets)
    day = np.repeat(np.arange(T), counts)
    r = y - x[day]
    ss = np.bincount(day, weights=r * r, minlength=T)
    g = rng.standard_gamma(1.0 + 0.5 * counts)
    nu[:] = (rate + 0.5 * ss) / g


def update_delta(rng, x, mu, rate):
    """Gamma draw of the intraseasonal precision 1/delta with shape
    ``1 + T/2`` and rate ``rate + ss/2`` (ss the squared residual sum of
    the daily means around the seasonal mean)."""
    T = len(x)
    r = x - mu
    ss = float(r @ r)
    g = float(rng.standard_gamma(1.0 + 0.5 * T))
    return (rate + 0.5 * ss) / g


def sample_chain(rng, z, tau, offsets, F, FtF, prior_mean, prior_var,
                 a_lo, a_hi, precision_rate, beta_mode, beta_lo, beta_hi,
                 sample_a, sample_nu, sample_delta,
                 y, x, beta, a_box, nu, delta_box,
                 n_iterations, n_burnin, thin,
                 out_x, out_beta, out_a, out_delta, out_nu, out_y):
    """Run one full Gibbs chain, storing thinned post-burn-in draws.

    State arrays (y, x, beta, a_box, nu, delta_box) are updated in place and
    hold the final state on return.  ``out_nu`` / ``out_y`` with zero rows
    disable storage of those blocks.
    """
    a = float(a_box[0])
    delta = float(delta_box[0])
    fb = F @ beta
    store_nu = out_nu.shape[0] > 0
    store_y = out_y.shape[0] > 0
    k = 0
    for it in range(n_iterations):
        mu = a + fb
        update_y(rng, z, tau, offsets, x, nu, y)
        update_x(rng, offsets, y, nu, mu, delta, x)
        if beta_mode == BETA_NORMAL:
            update_beta_normal(rng, F, FtF, x, a, delta, prior_mean, prior_var, beta)
            fb = F @ beta
        elif beta_mode == BETA_UNIFORM:
            update_beta_uniform(rng, F, x, a, delta, beta_lo, beta_hi, beta, fb)
        if sample_a:
            a = update_a(rng, x, fb, delta, a_lo, a_hi)
        if sample_nu:
            update_nu(rng, offsets, y, x, precision_rate, nu)
        if sample_delta:
            delta = update_delta(rng, x, a + fb, precision_rate)
        if it >= n_burnin and (it - n_burnin) % thin == 0:
            out_x[k] = x
            out_beta[k] = beta
            out_a[k] = a
            out_delta[k] = delta
            if store_nu:
                out_nu[k] = nu
            if store_y:
                out_y[k] = y
            k += 1
    a_box[0] = a
    delta_box[0] = delta
