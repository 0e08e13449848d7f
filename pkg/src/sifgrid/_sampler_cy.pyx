# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Gibbs update kernels, the hot loop of the sampler.

Mirrors ``_sampler_py`` operation for operation: the same full
conditionals, the same draw order, and the same underlying random routines
(`random_standard_normal`, `random_standard_gamma`,
`random_standard_uniform`), so for a given bit-generator state both
implementations consume identical random streams.  Numerical results agree
up to floating point reduction order.
"""

import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.math cimport nextafter, sqrt
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (
    random_standard_gamma, random_standard_normal, random_standard_uniform)
from scipy.special.cython_special cimport ndtr, ndtri

from numpy.linalg import LinAlgError

COMPILED = True

BETA_NORMAL = 0
BETA_UNIFORM = 1

cdef const char *_CAPSULE = b"BitGenerator"


cdef bitgen_t *_bitgen(object generator) except NULL:
    cdef object capsule = generator.bit_generator.capsule
    if not PyCapsule_IsValid(capsule, _CAPSULE):
        raise ValueError("generator does not expose a BitGenerator capsule")
    return <bitgen_t *> PyCapsule_GetPointer(capsule, _CAPSULE)


cdef double _trunc_normal(bitgen_t *bg, double m, double sd,
                          double lo, double hi) noexcept nogil:
    # Inverse-CDF truncated normal; right-of-mean intervals are reflected
    # into the left tail where ndtr keeps full precision.  Consumes exactly
    # one uniform and always lands strictly inside (lo, hi).
    cdef double u = random_standard_uniform(bg)
    cdef double a = (lo - m) / sd
    cdef double b = (hi - m) / sd
    cdef double p, q, xs, x
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
        x = nextafter(lo, hi)
    elif x >= hi:
        x = nextafter(hi, lo)
    return x


cdef void _update_y(bitgen_t *bg, double[::1] z, double[::1] tau,
                    long long[::1] offsets, double[::1] x, double[::1] nu,
                    double[::1] y) noexcept nogil:
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t t, i
    cdef double inv_nu, v, m
    for t in range(T):
        inv_nu = 1.0 / nu[t]
        for i in range(offsets[t], offsets[t + 1]):
            v = 1.0 / (1.0 / tau[i] + inv_nu)
            m = v * (z[i] / tau[i] + x[t] * inv_nu)
            y[i] = m + sqrt(v) * random_standard_normal(bg)


cdef void _update_x(bitgen_t *bg, long long[::1] offsets, double[::1] y,
                    double[::1] nu, double[::1] mu, double delta,
                    double[::1] x) noexcept nogil:
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t t, i
    cdef double s, n, v, m
    for t in range(T):
        s = 0.0
        for i in range(offsets[t], offsets[t + 1]):
            s += y[i]
        n = <double> (offsets[t + 1] - offsets[t])
        v = 1.0 / (n / nu[t] + 1.0 / delta)
        m = v * (s / nu[t] + mu[t] / delta)
        x[t] = m + sqrt(v) * random_standard_normal(bg)


cdef int _cholesky(double[:, ::1] A) noexcept nogil:
    # In-place lower Cholesky of the upper-left PxP block; returns -1 when a
    # pivot is not strictly positive.
    cdef Py_ssize_t P = A.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(P):
        s = A[j, j]
        for k in range(j):
            s -= A[j, k] * A[j, k]
        if not s > 0.0:
            return -1
        A[j, j] = sqrt(s)
        for i in range(j + 1, P):
            s = A[i, j]
            for k in range(j):
                s -= A[i, k] * A[j, k]
            A[i, j] = s / A[j, j]
    return 0


cdef void _solve_lower(double[:, ::1] L, double[::1] b) noexcept nogil:
    # b <- L^-1 b
    cdef Py_ssize_t P = L.shape[0]
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(P):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * b[k]
        b[i] = s / L[i, i]


cdef void _solve_upper_t(double[:, ::1] L, double[::1] b) noexcept nogil:
    # b <- L^-T b
    cdef Py_ssize_t P = L.shape[0]
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(P - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, P):
            s -= L[k, i] * b[k]
        b[i] = s / L[i, i]


cdef int _update_beta_normal(bitgen_t *bg, double[:, ::1] F, double[:, ::1] FtF,
                             double[::1] x, double a, double delta,
                             double[::1] prior_mean, double[::1] prior_var,
                             double[::1] beta, double[:, ::1] lam,
                             double[::1] rhs, double[::1] zb) noexcept nogil:
    cdef Py_ssize_t T = F.shape[0]
    cdef Py_ssize_t P = F.shape[1]
    cdef Py_ssize_t t, p, q
    cdef double s, inv_s
    for p in range(P):
        for q in range(P):
            lam[p, q] = FtF[p, q] / delta
        lam[p, p] += 1.0 / prior_var[p]
        s = 0.0
        for t in range(T):
            s += F[t, p] * (x[t] - a)
        rhs[p] = s / delta + prior_mean[p] / prior_var[p]
    if _cholesky(lam) != 0:
        return -1
    _solve_lower(lam, rhs)
    _solve_upper_t(lam, rhs)          # rhs now holds the conditional mean
    for p in range(P):
        zb[p] = random_standard_normal(bg)
    _solve_upper_t(lam, zb)
    for p in range(P):
        beta[p] = rhs[p] + zb[p]
    return 0


cdef void _update_beta_uniform(bitgen_t *bg, double[:, ::1] F, double[::1] x,
                               double a, double delta, double lo, double hi,
                               double[::1] beta, double[::1] fb) noexcept nogil:
    cdef Py_ssize_t T = F.shape[0]
    cdef Py_ssize_t P = F.shape[1]
    cdef Py_ssize_t t, j
    cdef double csq, dot, m, sd, new
    for j in range(P):
        csq = 0.0
        for t in range(T):
            csq += F[t, j] * F[t, j]
        if csq > 0.0:
            dot = 0.0
            for t in range(T):
                dot += F[t, j] * (x[t] - a - fb[t] + F[t, j] * beta[j])
            m = dot / csq
            sd = sqrt(delta / csq)
            new = _trunc_normal(bg, m, sd, lo, hi)
        else:
            new = lo + random_standard_uniform(bg) * (hi - lo)
        for t in range(T):
            fb[t] += F[t, j] * (new - beta[j])
        beta[j] = new


cdef double _update_a(bitgen_t *bg, double[::1] x, double[::1] fb,
                      double delta, double lo, double hi) noexcept nogil:
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t t
    cdef double s, m, sd
    if T == 0:
        return lo + random_standard_uniform(bg) * (hi - lo)
    s = 0.0
    for t in range(T):
        s += x[t] - fb[t]
    m = s / (<double> T)
    sd = sqrt(delta / (<double> T))
    return _trunc_normal(bg, m, sd, lo, hi)


cdef void _update_nu(bitgen_t *bg, long long[::1] offsets, double[::1] y,
                     double[::1] x, double rate, double[::1] nu) noexcept nogil:
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t t, i
    cdef double ss, r, n, g
    for t in range(T):
        ss = 0.0
        for i in range(offsets[t], offsets[t + 1]):
            r = y[i] - x[t]
            ss += r * r
        n = <double> (offsets[t + 1] - offsets[t])
        g = random_standard_gamma(bg, 1.0 + 0.5 * n)
        nu[t] = (rate + 0.5 * ss) / g


cdef double _update_delta(bitgen_t *bg, double[::1] x, double a,
                          double[::1] fb, double rate) noexcept nogil:
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t t
    cdef double ss = 0.0
    cdef double r, g
    for t in range(T):
        r = x[t] - (a + fb[t])
        ss += r * r
    g = random_standard_gamma(bg, 1.0 + 0.5 * (<double> T))
    return (rate + 0.5 * ss) / g


# ---------------------------------------------------------------------------
# Python-visible wrappers (one per full conditional) plus the fused chain.
# ---------------------------------------------------------------------------

def update_y(object rng, double[::1] z, double[::1] tau, long long[::1] offsets,
             double[::1] x, double[::1] nu, double[::1] y):
    _update_y(_bitgen(rng), z, tau, offsets, x, nu, y)


def update_x(object rng, long long[::1] offsets, double[::1] y, double[::1] nu,
             double[::1] mu, double delta, double[::1] x):
    _update_x(_bitgen(rng), offsets, y, nu, mu, delta, x)


def update_beta_normal(object rng, double[:, ::1] F, double[:, ::1] FtF,
                       double[::1] x, double a, double delta,
                       double[::1] prior_mean, double[::1] prior_var,
                       double[::1] beta):
    cdef Py_ssize_t P = beta.shape[0]
    lam = np.empty((P, P))
    rhs = np.empty(P)
    zb = np.empty(P)
    if _update_beta_normal(_bitgen(rng), F, FtF, x, a, delta, prior_mean,
                           prior_var, beta, lam, rhs, zb) != 0:
        raise LinAlgError("seasonal design precision is not positive definite")


def update_beta_uniform(object rng, double[:, ::1] F, double[::1] x, double a,
                        double delta, double lo, double hi, double[::1] beta,
                        double[::1] fb):
    _update_beta_uniform(_bitgen(rng), F, x, a, delta, lo, hi, beta, fb)


def update_a(object rng, double[::1] x, double[::1] fb, double delta,
             double lo, double hi):
    return _update_a(_bitgen(rng), x, fb, delta, lo, hi)


def update_nu(object rng, long long[::1] offsets, double[::1] y, double[::1] x,
              double rate, double[::1] nu):
    _update_nu(_bitgen(rng), offsets, y, x, rate, nu)


def update_delta(object rng, double[::1] x, double[::1] mu, double rate):
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t t
    cdef double ss = 0.0
    cdef double r, g
    cdef bitgen_t *bg = _bitgen(rng)
    for t in range(T):
        r = x[t] - mu[t]
        ss += r * r
    g = random_standard_gamma(bg, 1.0 + 0.5 * (<double> T))
    return (rate + 0.5 * ss) / g


def sample_chain(object rng, double[::1] z, double[::1] tau,
                 long long[::1] offsets, double[:, ::1] F, double[:, ::1] FtF,
                 double[::1] prior_mean, double[::1] prior_var,
                 double a_lo, double a_hi, double precision_rate,
                 int beta_mode, double beta_lo, double beta_hi,
                 int sample_a, int sample_nu, int sample_delta,
                 double[::1] y, double[::1] x, double[::1] beta,
                 double[::1] a_box, double[::1] nu, double[::1] delta_box,
                 long long n_iterations, long long n_burnin, long long thin,
                 double[:, ::1] out_x, double[:, ::1] out_beta,
                 double[::1] out_a, double[::1] out_delta,
                 double[:, ::1] out_nu, double[:, ::1] out_y):
    """Run one full Gibbs chain; see ``_sampler_py.sample_chain``."""
    cdef bitgen_t *bg = _bitgen(rng)
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t P = beta.shape[0]
    cdef Py_ssize_t N = y.shape[0]
    cdef double a = a_box[0]
    cdef double delta = delta_box[0]

    fb_arr = np.empty(T)
    mu_arr = np.empty(T)
    lam_arr = np.empty((P, P))
    rhs_arr = np.empty(P)
    zb_arr = np.empty(P)
    cdef double[::1] fb = fb_arr
    cdef double[::1] mu = mu_arr
    cdef double[:, ::1] lam = lam_arr
    cdef double[::1] rhs = rhs_arr
    cdef double[::1] zb = zb_arr

    cdef bint store_nu = out_nu.shape[0] > 0
    cdef bint store_y = out_y.shape[0] > 0
    cdef Py_ssize_t it, t, p, i, k = 0
    cdef double s
    cdef int status = 0

    for t in range(T):
        s = 0.0
        for p in range(P):
            s += F[t, p] * beta[p]
        fb[t] = s

    for it in range(n_iterations):
        for t in range(T):
            mu[t] = a + fb[t]
        _update_y(bg, z, tau, offsets, x, nu, y)
        _update_x(bg, offsets, y, nu, mu, delta, x)
        if beta_mode == 0:
            status = _update_beta_normal(bg, F, FtF, x, a, delta, prior_mean,
                                         prior_var, beta, lam, rhs, zb)
            if status != 0:
                raise LinAlgError(
                    "seasonal design precision is not positive definite")
            for t in range(T):
                s = 0.0
                for p in range(P):
                    s += F[t, p] * beta[p]
                fb[t] = s
        elif beta_mode == 1:
            _update_beta_uniform(bg, F, x, a, delta, beta_lo, beta_hi, beta, fb)
        if sample_a:
            a = _update_a(bg, x, fb, delta, a_lo, a_hi)
        if sample_nu:
            _update_nu(bg, offsets, y, x, precision_rate, nu)
        if sample_delta:
            delta = _update_delta(bg, x, a, fb, precision_rate)
        if it >= n_burnin and (it - n_burnin) % thin == 0:
            for t in range(T):
                out_x[k, t] = x[t]
            for p in range(P):
                out_beta[k, p] = beta[p]
            out_a[k] = a
            out_delta[k] = delta
            if store_nu:
                for t in range(T):
                    out_nu[k, t] = nu[t]
            if store_y:
                for i in range(N):
                    out_y[k, i] = y[i]
            k += 1

    a_box[0] = a
    delta_box[0] = delta
