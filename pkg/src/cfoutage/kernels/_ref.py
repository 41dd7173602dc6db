"""Pure-numpy reference backend for the numeric kernels.

Same contract as the compiled backend in ``_fast.pyx``: evaluate

    K_nu(z) = int_0^inf exp(-z*cosh(u)) * cosh(nu*u) du,   Re(z) > 0,

by a trapezoid rule on a shifted contour.  Integrating straight along the
real axis cancels catastrophically when nu dominates |z| (the integrand
oscillates at rate ~nu*tan(arg z) while the result is exp(-c*nu) smaller
than the peak terms), so the path is moved through the saddle point
u* = asinh(nu/z): a short vertical connector [0, j*c] with c = Im(u*),
evaluated by composite Gauss-Legendre, plus the horizontal half-line
[j*c, j*c + inf) where the trapezoid rule converges double-exponentially
without cancellation.  The step is halved until two consecutive levels
agree; everything is accumulated in log space so large orders neither
overflow nor underflow.

Keep the math in sync with ``_fast.pyx``; the test suite compares the two
backends directly.
"""

import numpy as np

from ._common import H0, LOG_CUT, MAX_LEVELS, REL_TOL

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)
_GL_TAU = 0.5 * (_GL_NODES + 1.0)  # mapped to [0, 1]


class KernelConvergenceError(RuntimeError):
    """Quadrature failed to reach the target accuracy."""


def _contour_shift(nu, z):
    """Imaginary part of the saddle asinh(nu/z), clamped inside the strip."""
    xi = np.angle(z)
    if nu == 0.0:
        return np.zeros(z.shape)
    c = np.imag(np.arcsinh(nu / z))
    return -np.sign(xi) * np.minimum.reduce(
        [np.abs(c), np.abs(xi), np.full(z.shape, 1.55)])


def _log_connector(nu, z, c):
    """log of j * int_0^c exp(-z*cos(y)) * cos(nu*y) dy (None where c = 0).

    The integrand magnitude never exceeds exp(-Re z * cos c), which anchors
    the log scale; panel count tracks the oscillation budget nu*|c| + |z|*|c|.
    """
    out = np.full(z.shape, -np.inf + 0.0j, dtype=np.complex128)
    idx = np.flatnonzero(c != 0.0)
    if idx.size == 0:
        return out
    zc, cc = z[idx], c[idx]
    n_panels = int(np.ceil((np.max((nu + np.abs(zc)) * np.abs(cc)) + 40.0)
                           / 40.0))
    offsets = np.arange(n_panels) / n_panels
    tau = (offsets[:, None] + _GL_TAU[None, :] / n_panels).ravel()
    wq = np.tile(_GL_WEIGHTS / (2.0 * n_panels), n_panels)
    y = cc[:, None] * tau[None, :]
    anchor = -zc.real * np.cos(cc)
    f = np.exp(-zc[:, None] * np.cos(y) - anchor[:, None]) * np.cos(nu * y)
    integral = 1j * cc * (f @ wq)
    good = integral != 0.0
    vals = np.where(good, integral, 1.0)
    out[idx] = np.where(good, anchor + np.log(vals), -np.inf + 0.0j)
    return out


def _log_cosh(w):
    """log cosh(w) for complex w with Re(w) >= 0 (principal branch)."""
    # |exp(-2w)| <= 1, so log(1 + exp(-2w)) never overflows
    small = np.exp(-2.0 * w)
    return w + np.log(1.0 + small) - np.log(2.0)


def _level_log_sum(nu, z, c, h, w_lo, w_hi):
    """log of the scaled trapezoid sum at step h in the DE variable w.

    Double-exponential endpoint map s = exp(w - exp(-w)) turns the
    half-line integral into a whole-line trapezoid whose terms decay
    double-exponentially in both directions (the plain rule on the shifted
    line would only converge O(h^2), the endpoint s=0 being no longer a
    point of even symmetry).
    """
    w = np.arange(int(np.floor(w_lo / h)), int(np.ceil(w_hi / h)) + 1) * h
    s = np.exp(w - np.exp(-w))
    log_jac = (w - np.exp(-w)) + np.log1p(np.exp(-w))
    out = np.empty(z.shape[0], dtype=np.complex128)
    rows = max(1, 4_000_000 // s.size)
    for lo in range(0, z.shape[0], rows):
        u = s[None, :] + 1j * c[lo:lo + rows, None]
        g = (-z[lo:lo + rows, None] * np.cosh(u) + _log_cosh(nu * u)
             + log_jac[None, :])
        m = g.real.max(axis=1)
        terms = np.exp(g - m[:, None])
        out[lo:lo + rows] = m + np.log(terms.sum(axis=1) * h)
    return out


def _w_window(nu, z, c):
    """Trapezoid window (w_lo, w_hi) in the DE variable (coarse probe scan).

    Real arithmetic only (complex cosh overflows to NaN products), and the
    threshold is relative to the probe-grid maximum, which can only sit
    below the true peak -- so the cut is conservative.
    """
    decay = np.abs(z) * np.maximum(np.cos(np.angle(z) + c), 0.05)
    s_hi = min(float(np.arcsinh((nu + 250.0) / decay.min())) + 6.0, 700.0)
    s = np.arange(0.0, s_hi + 0.5, 0.5)
    cosh_s, sinh_s = np.cosh(s), np.sinh(s)
    # Re(z*cosh(s+jc)) = Re z cosh(s) cos(c) - Im z sinh(s) sin(c)
    re_zcosh = (np.multiply.outer(z.real * np.cos(c), cosh_s)
                - np.multiply.outer(z.imag * np.sin(c), sinh_s))
    gr = -re_zcosh + nu * s[None, :]
    m = gr.max(axis=1)
    below = gr < (m[:, None] - LOG_CUT - 8.0)
    past_peak = np.arange(s.size)[None, :] > gr.argmax(axis=1)[:, None]
    ok = below & past_peak
    if not np.all(ok.any(axis=1)):
        raise KernelConvergenceError(f"integrand truncation beyond s={s_hi}")
    s_cut = float(s[ok.argmax(axis=1)].max() + 0.5)
    # toward s=0 the integrand tends to the endpoint value (deficit below
    # the peak) and the DE jacobian then kills it double-exponentially
    g_end = -z.real * np.cos(c) + 0.0
    deficit = float(np.max(m - g_end))
    w_lo = -np.log(max(deficit, 0.0) + LOG_CUT + 20.0) - 1.5
    w_hi = min(np.log(max(s_cut, 1e-3)) + 1.5, np.log(705.0))
    return w_lo, w_hi


def _combine(log_i2, log_i1):
    """log(exp(log_i2) + exp(log_i1)), anchored at the larger real part."""
    anchor = np.maximum(log_i2.real, np.where(np.isfinite(log_i1.real),
                                              log_i1.real, -np.inf))
    total = np.exp(log_i2 - anchor)
    finite = np.isfinite(log_i1.real)
    total[finite] += np.exp(log_i1[finite] - anchor[finite])
    return anchor + np.log(total)


def log_kv_grid(nu, z, out):
    """Fill ``out`` with log K_nu(z) for each entry of ``z``."""
    z = np.ascontiguousarray(z, dtype=np.complex128)
    n = z.shape[0]
    if n == 0:
        return
    chunk = 1024
    for lo in range(0, n, chunk):
        zc = z[lo:lo + chunk]
        c = _contour_shift(nu, zc)
        log_i1 = _log_connector(nu, zc, c)
        w_lo, w_hi = _w_window(nu, zc, c)

        active = np.arange(zc.shape[0])
        result = np.empty(zc.shape[0], dtype=np.complex128)
        prev = _combine(_level_log_sum(nu, zc, c, H0, w_lo, w_hi), log_i1)
        for level in range(1, MAX_LEVELS + 1):
            h = H0 / 2.0 ** level
            cur = _combine(
                _level_log_sum(nu, zc[active], c[active], h, w_lo, w_hi),
                log_i1[active])
            rel = np.abs(np.exp(prev[active] - cur) - 1.0)
            ok = rel <= REL_TOL
            result[active[ok]] = cur[ok]
            prev[active] = cur
            active = active[~ok]
            if active.size == 0:
                break
        if active.size:
            raise KernelConvergenceError(
                f"log_kv_grid: {active.size} points unconverged after "
                f"{MAX_LEVELS} refinements (nu={nu})")
        out[lo:lo + chunk] = result


def gil_pelaez_sum(x, t, q, out):
    """out[j] = sum_i Im(exp(-1j*t[i]*x[j]) * q[i]), chunked to bound memory."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    qr = np.ascontiguousarray(q.real)
    qi = np.ascontiguousarray(q.imag)
    chunk = 64
    for lo in range(0, x.shape[0], chunk):
        ph = np.multiply.outer(x[lo:lo + chunk], t)
        out[lo:lo + chunk] = np.cos(ph) @ qi - np.sin(ph) @ qr
