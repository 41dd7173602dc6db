# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled backend for the numeric kernels.

Scalar, adaptive version of the scheme in ``_ref.py``: per-point trapezoid
refinement along the saddle-shifted contour, with warm-started step sizes
when sweeping a grid (neighbouring grid points need nearly the same step,
so most points settle after two levels).  Keep the math in sync with
``_ref.py``; the test suite compares the two backends directly.
"""

import numpy as _np

from libc.math cimport (asinh, atan2, cos, cosh, exp, fabs, hypot, log,
                        log1p, sin, sinh, sqrt)

from ._common import H0 as _PY_H0
from ._common import LOG_CUT as _PY_LOG_CUT
from ._common import MAX_LEVELS as _PY_MAX_LEVELS
from ._common import REL_TOL as _PY_REL_TOL

cdef double H0 = _PY_H0
cdef double LOG_CUT = _PY_LOG_CUT
cdef int MAX_LEVELS = _PY_MAX_LEVELS
cdef double REL_TOL = _PY_REL_TOL
cdef double LOG2 = 0.69314718055994530942
cdef double PI = 3.14159265358979323846

# 20-point Gauss-Legendre rule on [0, 1] for the vertical connector
cdef double[20] GL_TAU
cdef double[20] GL_W
_nodes, _weights = _np.polynomial.legendre.leggauss(20)
for _i in range(20):
    GL_TAU[_i] = 0.5 * (_nodes[_i] + 1.0)
    GL_W[_i] = 0.5 * _weights[_i]


class KernelConvergenceError(RuntimeError):
    """Quadrature failed to reach the target accuracy."""


cdef inline double complex _cexp(double complex w) nogil:
    cdef double m = exp(w.real)
    return m * cos(w.imag) + 1j * (m * sin(w.imag))


cdef inline double complex _clog(double complex w) nogil:
    return log(hypot(w.real, w.imag)) + 1j * atan2(w.imag, w.real)


cdef inline double complex _ccosh(double complex w) nogil:
    return (cosh(w.real) * cos(w.imag)
            + 1j * (sinh(w.real) * sin(w.imag)))


cdef inline double complex _log_cosh(double complex w) nogil:
    # Re(w) >= 0 so |exp(-2w)| <= 1 and log(1 + exp(-2w)) is safe
    if w.real > 350.0:
        return w - LOG2
    return w + _clog(1.0 + _cexp(-2.0 * w)) - LOG2


cdef double _contour_shift(double nu, double complex z) nogil:
    cdef double xi = atan2(z.imag, z.real)
    cdef double complex w, u
    cdef double c, bound
    if nu == 0.0 or xi == 0.0:
        return 0.0
    # Im(asinh(nu / z)), asinh(w) = log(w + sqrt(w^2 + 1))
    w = nu / z
    u = w + _csqrt_right(w * w + 1.0)
    c = atan2(u.imag, u.real)
    bound = fabs(xi)
    if bound > 1.55:
        bound = 1.55
    if fabs(c) > bound:
        c = bound if c > 0.0 else -bound
    # force the sign opposite to arg(z)
    if xi > 0.0 and c > 0.0:
        c = -c
    if xi < 0.0 and c < 0.0:
        c = -c
    return c


cdef inline double complex _csqrt_right(double complex w) nogil:
    # principal square root (Re >= 0)
    cdef double r = hypot(w.real, w.imag)
    cdef double re = sqrt(0.5 * (r + w.real))
    cdef double im
    if re == 0.0:
        im = sqrt(0.5 * r)
        if w.imag < 0.0:
            im = -im
        return re + 1j * im
    im = 0.5 * w.imag / re
    return re + 1j * im


cdef int _log_connector(double nu, double complex z, double c,
                        double complex* out) nogil:
    """log of j * int_0^c exp(-z*cos(y))*cos(nu*y) dy; 1 if identically 0."""
    cdef int n_panels, p, k
    cdef double anchor, tau, y
    cdef double complex acc = 0.0, f
    if c == 0.0:
        return 1
    n_panels = <int>(((nu + hypot(z.real, z.imag)) * fabs(c) + 40.0) / 40.0) + 1
    anchor = -z.real * cos(c)
    for p in range(n_panels):
        for k in range(20):
            tau = (p + GL_TAU[k]) / n_panels
            y = c * tau
            f = _cexp(-z * cos(y) - anchor) * cos(nu * y)
            acc = acc + GL_W[k] * f
    acc = acc * (1j * c / n_panels)
    if acc == 0.0:
        return 1
    out[0] = anchor + _clog(acc)
    return 0


cdef inline double complex _g_de(double nu, double complex z, double c,
                                 double w) nogil:
    """log integrand in the DE variable: s = exp(w - exp(-w)), jacobian
    included.  The endpoint map makes the whole-line trapezoid terms decay
    double-exponentially both ways (the plain rule on the shifted line
    would only converge O(h^2))."""
    cdef double ew = exp(-w)
    cdef double s = exp(w - ew)
    cdef double log_jac = (w - ew) + log1p(ew)
    return (-z * _ccosh(s + 1j * c)
            + _log_cosh(nu * s + 1j * (nu * c)) + log_jac)


cdef int _level_log_sum(double nu, double complex z, double c, double h,
                        double s_peak, double complex* out) nogil:
    """log of the scaled whole-line trapezoid sum at step h in w."""
    cdef double complex gc = _g_de(nu, z, c, 0.0)
    cdef double m = gc.real
    cdef double sr, si, gr, gi, e, scale
    cdef long k
    cdef double w, s
    cdef int direction
    if m > -1e300:
        sr = cos(gc.imag)
        si = sin(gc.imag)
    else:
        m = -1e300
        sr = 0.0
        si = 0.0
    for direction in range(2):
        k = 1
        while True:
            w = k * h if direction == 0 else -k * h
            if w > 6.56:          # s beyond 705: cosh would overflow
                break
            gc = _g_de(nu, z, c, w)
            gr = gc.real
            gi = gc.imag
            if gr > m:
                scale = exp(m - gr)
                sr *= scale
                si *= scale
                m = gr
                sr += cos(gi)
                si += sin(gi)
            else:
                e = exp(gr - m)
                sr += e * cos(gi)
                si += e * sin(gi)
            if gr < m - LOG_CUT:
                if direction == 1:
                    break
                s = exp(w - exp(-w))
                if s > s_peak:
                    break
            if k > 4000000:
                return 1
            k += 1
    sr *= h
    si *= h
    out[0] = (m + log(hypot(sr, si))) + 1j * atan2(si, sr)
    return 0


cdef inline double complex _combine(double complex log_i2,
                                    double complex log_i1,
                                    bint have_i1) nogil:
    cdef double anchor
    cdef double complex total
    if not have_i1:
        return log_i2
    anchor = log_i2.real if log_i2.real > log_i1.real else log_i1.real
    total = _cexp(log_i2 - anchor) + _cexp(log_i1 - anchor)
    return anchor + _clog(total)


cdef int _log_kv(double nu, double complex z, int level_start,
                 double complex* out, int* level_used) nogil:
    cdef double c = _contour_shift(nu, z)
    cdef double xi = atan2(z.imag, z.real)
    cdef double decay = hypot(z.real, z.imag) * cos(xi + c)
    cdef double s_peak
    cdef double complex log_i1 = 0.0, prev, cur, lvl, d
    cdef bint have_i1
    cdef double rel
    cdef int level
    if decay < 0.05 * hypot(z.real, z.imag):
        decay = 0.05 * hypot(z.real, z.imag)
    s_peak = asinh(nu / decay)
    have_i1 = _log_connector(nu, z, c, &log_i1) == 0
    if _level_log_sum(nu, z, c, H0 / 2.0 ** level_start, s_peak, &prev):
        return 1
    prev = _combine(prev, log_i1, have_i1)
    for level in range(level_start + 1, MAX_LEVELS + 1):
        if _level_log_sum(nu, z, c, H0 / 2.0 ** level, s_peak, &lvl):
            return 1
        cur = _combine(lvl, log_i1, have_i1)
        d = prev - cur
        rel = hypot(exp(d.real) * cos(d.imag) - 1.0, exp(d.real) * sin(d.imag))
        if rel <= REL_TOL:
            out[0] = cur
            level_used[0] = level
            return 0
        prev = cur
    return 2


def log_kv_grid(double nu, double complex[::1] z, double complex[::1] out):
    """Fill ``out`` with log K_nu(z) for each entry of ``z``."""
    cdef Py_ssize_t i, n = z.shape[0]
    cdef int start = 0, used = 0, status = 0
    cdef Py_ssize_t bad = -1
    with nogil:
        for i in range(n):
            status = _log_kv(nu, z[i], start, &out[i], &used)
            if status != 0:
                bad = i
                break
            start = used - 1 if used > 1 else 0
    if status != 0:
        raise KernelConvergenceError(
            f"log_kv_grid: point {bad} (z={complex(z[bad])}) unconverged "
            f"after {MAX_LEVELS} refinements (nu={nu}, status={status})"
        )


def gil_pelaez_sum(double[::1] x, double[::1] t,
                   double complex[::1] q, double[::1] out):
    """out[j] = sum_i Im(exp(-1j*t[i]*x[j]) * q[i])."""
    cdef Py_ssize_t i, j, n = t.shape[0], m = x.shape[0]
    cdef double acc, ph, xj
    with nogil:
        for j in range(m):
            xj = x[j]
            acc = 0.0
            for i in range(n):
                ph = t[i] * xj
                acc += q[i].imag * cos(ph) - q[i].real * sin(ph)
            out[j] = acc
