"""Tuning constants shared by the compiled and reference kernel backends.

Both backends implement the same double-exponential trapezoid scheme for
K_nu(z) = int_0^inf exp(-z*cosh(u)) * cosh(nu*u) du,  Re(z) > 0,
so they must agree on step sizes, truncation and convergence thresholds.
"""

# Initial trapezoid step in u; halved on each refinement level.
H0 = 0.5

# Maximum number of halvings before reporting non-convergence.  The deep
# end of the ladder is only reached when Im(z) drives fast oscillation
# (large |z| far off the positive real axis).
MAX_LEVELS = 12

# Relative tolerance between successive refinement levels (target 1e-10
# for the returned value, so the level-to-level test is a notch tighter).
REL_TOL = 1e-11

# Terms with Re(g) below the running maximum minus LOG_CUT are dropped
# (exp(-46) ~ 1e-20, far below double precision at the sum's scale).
LOG_CUT = 46.0

# Orders above this make the integrand peak too narrow for the step
# ladder above; callers are expected to treat such fits as degenerate.
NU_MAX = 2000.0
