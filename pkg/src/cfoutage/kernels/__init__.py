"""Numeric kernels with a compiled core and a pure-numpy fallback.

The hot paths of the characteristic-function machinery are (a) the modified
Bessel function of the second kind with complex argument, evaluated on grids
of ~1e5 points per inversion, and (b) the Gil-Pelaez oscillatory sums over
those grids.  Both are implemented twice:

* ``_fast`` -- Cython extension, built at install time;
* ``_ref``  -- vectorized numpy, always available.

The compiled backend is picked at import when present.  Set
``CFOUTAGE_KERNELS=python`` (or ``cython``) to force a backend; forcing
``cython`` raises if the extension is missing.  ``benchmarks/bench_kernels.py``
compares the two.
"""

import os

import numpy as np

_CHOICE = os.environ.get("CFOUTAGE_KERNELS", "auto").strip().lower()

if _CHOICE in ("auto", ""):
    try:
        from . import _fast as _impl
        BACKEND = "cython"
    except ImportError:
        from . import _ref as _impl
        BACKEND = "numpy"
elif _CHOICE in ("cython", "c", "compiled", "fast"):
    from . import _fast as _impl
    BACKEND = "cython"
elif _CHOICE in ("python", "numpy", "py", "ref"):
    from . import _ref as _impl
    BACKEND = "numpy"
else:
    raise ImportError(f"unrecognized CFOUTAGE_KERNELS value: {_CHOICE!r}")

KernelConvergenceError = _impl.KernelConvergenceError


def backend():
    """Name of the active kernel backend ('cython' or 'numpy')."""
    return BACKEND


def log_bessel_k(nu, z):
    """log K_nu(z) for real order nu >= 0 and Re(z) > 0.

    Accepts a scalar or array ``z``; the imaginary part of the result is the
    phase of K (not unwrapped -- meaningful only modulo 2*pi).
    """
    if nu < 0:
        raise ValueError("order nu must be >= 0 (K is even in nu)")
    z_arr = np.atleast_1d(np.asarray(z, dtype=np.complex128))
    if np.any(z_arr.real <= 0.0):
        raise ValueError("log_bessel_k requires Re(z) > 0")
    out = np.empty(z_arr.shape[0], dtype=np.complex128)
    _impl.log_kv_grid(float(nu), np.ascontiguousarray(z_arr), out)
    if np.isscalar(z) or getattr(z, "ndim", 0) == 0:
        return complex(out[0])
    return out


def gil_pelaez_sum(x, t, q):
    """sum_i Im(exp(-1j*t_i*x_j) * q_i) for each x_j."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    t = np.ascontiguousarray(t, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.complex128)
    if t.shape != q.shape:
        raise ValueError("t and q must have matching shapes")
    out = np.empty(x.shape[0], dtype=np.float64)
    _impl.gil_pelaez_sum(x, t, q, out)
    return out
