"""Outage probability, epsilon-outage rate selection, and validation.

The SINR's only random term across transmission intervals is the unknown
interference power, so

    Pr[SINR <= T] = 1 - F_IUI(|DS|^2 / T - IUSI - a^H F a),

and rate selection inverts that: pick the SINR threshold whose unknown
interference headroom equals the (1-eps) quantile of the fitted mixture.
The four-step procedure measures per-AP interference powers over drops,
moment-fits an Inverse-Gamma per AP, weighs them by |a_l|^2, and reads the
quantile off the Gil-Pelaez CDF.  The fixed-margin baseline ignores the
unknown interference entirely and divides the interference-free SINR by a
constant margin.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from . import igsum, receiver
from .receiver import STREAM_FIT, STREAM_VALIDATE


@dataclass(frozen=True)
class OutagePolicy:
    """A selected transmission point: SINR threshold T and SE R."""

    epsilon: float          # target outage (the baseline keeps its target too)
    T: float                # epsilon-outage SINR threshold, linear
    R: float                # epsilon-outage SE, bits/s/Hz
    method: str             # "proposed" | "fixed-margin"
    margin_db: float = None


@dataclass
class ProcedureConfig:
    """Sampling effort knobs for the four-step procedure and validation."""

    n_fit_drops: int = 200
    n_mc_stats: int = 5000
    n_mc_drop: int = 1000      # fading blocks per fitting drop
    n_mc_validation: int = 500  # fading blocks per validation drop
    n_validation_drops: int = 2000
    quad: igsum.QuadratureSpec = field(default_factory=igsum.QuadratureSpec)
    n_jobs: int = -1


def _inversion(mixture_or_inv, quad):
    if isinstance(mixture_or_inv, igsum.MixtureInversion):
        return mixture_or_inv
    return igsum.MixtureInversion(mixture_or_inv, quad)


def outage_probability(decomp, mixture, threshold, quad=None):
    """Pr[SINR <= T] under the fitted unknown-interference mixture."""
    if not threshold > 0.0:
        raise ValueError("threshold must be positive")
    y = abs(decomp.DS) ** 2 / threshold - decomp.IUSI - decomp.noise_term
    if y <= 0.0:
        return 1.0
    return 1.0 - _inversion(mixture, quad).cdf(y)


def epsilon_outage_policy(decomp, mixture, epsilon, prelog, quad=None):
    """T(eps) = |DS|^2 / (F^-1(1-eps) + IUSI + a^H F a); R = prelog*log2(1+T)."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must be in (0, 1)")
    q = _inversion(mixture, quad).inverse(1.0 - epsilon)
    t = abs(decomp.DS) ** 2 / (q + decomp.IUSI + decomp.noise_term)
    return OutagePolicy(epsilon=epsilon, T=t,
                        R=prelog * math.log2(1.0 + t), method="proposed")


def baseline_margin_policy(decomp, margin_db, prelog, epsilon=None):
    """Fixed fade margin: unknown-interference-free SINR divided by m."""
    if margin_db < 0.0:
        raise ValueError("margin must be >= 0 dB")
    m = 10.0 ** (margin_db / 10.0)
    t = abs(decomp.DS) ** 2 / ((decomp.IUSI + decomp.noise_term) * m)
    return OutagePolicy(epsilon=epsilon, T=t,
                        R=prelog * math.log2(1.0 + t),
                        method="fixed-margin", margin_db=margin_db)


def _run_drop(model, stream, index, n_mc):
    return receiver.simulate_unknown_drop(model, stream, index, n_mc)


def collect_drops(model, n_drops, n_mc, stream, n_jobs=-1):
    """Independent unknown-UE drops, parallelized; order-stable results."""
    if n_drops <= 0:
        return []
    return Parallel(n_jobs=n_jobs)(
        delayed(_run_drop)(model, stream, i, n_mc) for i in range(n_drops))


def fit_mixture_from_drops(decomp, drops):
    """Steps 2-3: per-AP sample moments -> IG parameters, weighted by |a_l|^2.

    Returns (mixture, per_ap_stats); mixture is None when the measured
    interference is degenerate (no unknown UEs, or zero variance).
    """
    powers = np.array([d.per_ap_power for d in drops])  # (n_drops, L_s)
    mu = powers.mean(axis=0)
    v = powers.var(axis=0, ddof=1)
    per_ap = {"mu": mu, "v": v, "alpha": None, "beta": None,
              "weights": decomp.weights_sq}
    if np.any(mu <= 0.0) or np.any(v <= 0.0):
        return None, per_ap
    alpha, beta = zip(*(igsum.fit_inverse_gamma(m, var)
                        for m, var in zip(mu, v)))
    per_ap["alpha"] = np.array(alpha)
    per_ap["beta"] = np.array(beta)
    components = tuple(
        igsum.IgComponent(alpha=a, beta=b, weight=w)
        for a, b, w in zip(alpha, beta, decomp.weights_sq))
    return igsum.IgMixture(components=components), per_ap


def run_procedure(model, epsilon, proc=None):
    """Four-step procedure on a built scenario model.

    Step 1: per-AP unknown interference power samples over fitting drops.
    Step 2: sample mean/variance per AP.  Step 3: moment-matched IG
    parameters.  Step 4: epsilon-outage policy from the inverted mixture
    CDF.  Returns (policy, diagnostics dict with all intermediates).
    """
    proc = proc or ProcedureConfig()
    decomp = model.decomp
    drops = collect_drops(model, proc.n_fit_drops, proc.n_mc_drop,
                          STREAM_FIT, proc.n_jobs)
    mixture, per_ap = (fit_mixture_from_drops(decomp, drops)
                       if drops else (None, {"mu": None, "v": None,
                                             "alpha": None, "beta": None,
                                             "weights": decomp.weights_sq}))
    diagnostics = {
        "per_ap": per_ap,
        "DS": decomp.DS,
        "IUSI": decomp.IUSI,
        "noise_term": decomp.noise_term,
        "n_fit_drops": len(drops),
        "diag_ratio_mean": (float(np.mean([d.diag_ratio for d in drops]))
                            if drops else 0.0),
        "mixture": mixture,
    }
    if mixture is None:
        # degenerate measurement: no unknown-interference headroom to model
        policy = baseline_margin_policy(decomp, 0.0, model.prelog,
                                        epsilon=epsilon)
        diagnostics["degenerate"] = True
        return OutagePolicy(epsilon=epsilon, T=policy.T, R=policy.R,
                            method="proposed"), diagnostics
    diagnostics["degenerate"] = False
    policy = epsilon_outage_policy(decomp, mixture, epsilon, model.prelog,
                                   proc.quad)
    return policy, diagnostics


def drop_sinrs(model, n_drops, n_mc, stream=STREAM_VALIDATE, n_jobs=-1):
    """Omniscient per-drop effective SINRs on fresh validation drops."""
    drops = collect_drops(model, n_drops, n_mc, stream, n_jobs)
    return np.array([model.decomp.sinr(d.iui_true) for d in drops])


def wilson_interval(successes, n, z=1.96):
    """95% Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


def outage_from_sinrs(policy, sinrs):
    """Achieved outage of a policy on a shared set of drop SINRs."""
    sinrs = np.asarray(sinrs)
    hits = int(np.count_nonzero(sinrs < policy.T))
    p_hat = hits / len(sinrs)
    return p_hat, wilson_interval(hits, len(sinrs))


def empirical_outage(policy, model, n_drops=2000, n_mc=500,
                     stream=STREAM_VALIDATE, n_jobs=-1, sinrs=None):
    """Fraction of fresh drops whose effective SINR falls below policy.T.

    Precomputed ``sinrs`` may be passed to evaluate several policies on a
    common drop set; validation streams are disjoint from fitting streams.
    """
    if sinrs is None:
        if n_drops < 100:
            raise ValueError("n_drops must be at least 100")
        sinrs = drop_sinrs(model, n_drops, n_mc, stream, n_jobs)
    return outage_from_sinrs(policy, sinrs)
