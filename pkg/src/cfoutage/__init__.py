"""cfoutage: uplink simulator and outage-constrained rate adaptation toolkit
for cell-free massive MIMO with unknown inter-cluster interference.

Layers, bottom up:

* ``kernels``   compiled/numpy numeric core (complex Bessel K, inversion sums)
* ``scenario``  network geometry, pathloss, correlated shadowing
* ``channel``   spatial correlation, Rayleigh fading, pilots, estimation
* ``receiver``  MR/RZF combining, LSFD fusion, Monte Carlo SINR statistics
* ``igsum``     inverse-gamma fitting, characteristic functions, CDF inversion
* ``rateadapt`` outage probability, epsilon-outage policies, validation
* ``cli``       reproducible experiment runner
"""

__version__ = "0.1.0"

from . import channel, igsum, kernels, rateadapt, receiver, scenario

__all__ = [
    "__version__",
    "channel",
    "igsum",
    "kernels",
    "rateadapt",
    "receiver",
    "scenario",
]
