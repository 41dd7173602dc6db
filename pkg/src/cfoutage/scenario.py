"""Network layout, large-scale propagation and unknown-interferer drops.

One serving cluster of ``L_s`` APs sits inside a disk around the origin
together with the desired UE and the known interferers.  The remaining APs
form a ring of neighboring clusters; unknown interferers are dropped
uniformly (by area) on an annulus outside the serving disk, freshly per
drop.  Pathloss follows the urban-microcell power law
``intercept_db - exponent_decades * log10(d)`` with per-AP log-normal
shadowing that is spatially correlated across UEs and independent across
APs.
"""

from dataclasses import dataclass, field

import numpy as np

# Neighbor tier: 6 clusters of (L - L_s)/6 APs each, centers equally spaced
# on a ring between the serving disk and the far edge of the drop annulus.
N_NEIGHBOR_CLUSTERS = 6
NEIGHBOR_RING_RADIUS = 700.0
NEIGHBOR_SPREAD = 300.0

# Fixed desired-UE placements; "center" is offset from the exact origin so
# AP-UE distances stay nonzero for any AP draw.
UE_PRESETS = {
    "center": (1.0, 0.0),
    "edge": (390.0, 0.0),
}


def substream(seed, *key):
    """Independent, order-insensitive RNG substream for (seed, *key).

    Drop ``i`` of purpose ``p`` uses ``substream(seed, p, i)``, so parallel
    evaluation order cannot change any draw.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass(frozen=True)
class PathlossModel:
    intercept_db: float = -30.5
    exponent_decades: float = 36.7  # dB per decade of distance


@dataclass(frozen=True)
class ShadowingModel:
    std_db: float = 4.0
    decorrelation_m: float = 9.0  # distance halving the UE-UE covariance


@dataclass(frozen=True)
class ScenarioConfig:
    """Network and frame parameters (defaults reproduce the standard setup)."""

    L: int = 21            # total APs
    L_s: int = 3           # serving-cluster APs
    N: int = 16            # antennas per AP
    K_n: int = 10          # known interferers
    K_u: int = 100         # unknown interferers
    p_mw: float = 100.0    # per-UE transmit power, mW
    noise_dbm: float = -94.0
    tau_c: int = 200
    tau_p: int = 10
    serving_radius: float = 400.0
    annulus: tuple = (450.0, 1000.0)
    pathloss: PathlossModel = field(default_factory=PathlossModel)
    shadowing: ShadowingModel = field(default_factory=ShadowingModel)
    asd_deg: float = 15.0
    corr_model: str = "gaussian-local-scattering"
    ue_preset: str = "center"
    seed: int = 0

    def __post_init__(self):
        if self.L_s > self.L:
            raise ValueError("L_s must not exceed L")
        if self.L_s < 1 or self.N < 1:
            raise ValueError("L_s and N must be positive")
        if self.K_n < 0 or self.K_u < 0:
            raise ValueError("interferer counts must be nonnegative")
        if not self.tau_p < self.K_n + 1:
            raise ValueError("tau_p must be < K_n + 1 (pilot shortage regime)")
        if not 0 < self.tau_p < self.tau_c:
            raise ValueError("need 0 < tau_p < tau_c")
        if not self.p_mw > 0:
            raise ValueError("transmit power must be positive")
        r_min, r_max = self.annulus
        if not self.serving_radius < r_min < r_max:
            raise ValueError("annulus must satisfy serving_radius < r_min < r_max")
        if self.corr_model not in ("gaussian-local-scattering", "uncorrelated"):
            raise ValueError(f"unknown correlation model {self.corr_model!r}")
        if self.ue_preset not in UE_PRESETS:
            raise ValueError(f"unknown UE preset {self.ue_preset!r}")

    @property
    def sigma2(self):
        """Receiver noise power in mW."""
        return 10.0 ** (self.noise_dbm / 10.0)

    @property
    def n_known(self):
        return self.K_n + 1

    @property
    def prelog(self):
        return (self.tau_c - self.tau_p) / self.tau_c


@dataclass
class Geometry:
    ap_positions: np.ndarray        # (L, 2)
    serving_set: np.ndarray         # (L_s,) indices into ap_positions
    known_ue_positions: np.ndarray  # (K_n + 1, 2), desired UE included
    unknown_ue_positions: np.ndarray  # (K_u, 2)
    desired_ue_index: int = 0

    @property
    def serving_positions(self):
        return self.ap_positions[self.serving_set]


@dataclass
class LargeScale:
    beta: np.ndarray  # (n_ue, n_ap) linear average channel gains
    d: np.ndarray     # (n_ue, n_ap) distances, m
    F: np.ndarray     # (n_ue, n_ap) shadowing realizations, dB


def _uniform_disk(center, radius, n, rng):
    r = radius * np.sqrt(rng.uniform(size=n))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return np.asarray(center) + np.stack([r * np.cos(theta),
                                          r * np.sin(theta)], axis=-1)


def place_network(config, rng):
    """Serving cluster + neighbor tier + fixed known UEs."""
    n_neighbor = config.L - config.L_s
    if n_neighbor % N_NEIGHBOR_CLUSTERS:
        raise ValueError(
            f"L - L_s = {n_neighbor} must be divisible by "
            f"{N_NEIGHBOR_CLUSTERS} neighbor clusters")
    serving = _uniform_disk((0.0, 0.0), config.serving_radius, config.L_s, rng)
    per_cluster = n_neighbor // N_NEIGHBOR_CLUSTERS
    neighbor = []
    for c in range(N_NEIGHBOR_CLUSTERS):
        ang = 2.0 * np.pi * c / N_NEIGHBOR_CLUSTERS
        center = NEIGHBOR_RING_RADIUS * np.array([np.cos(ang), np.sin(ang)])
        neighbor.append(_uniform_disk(center, NEIGHBOR_SPREAD, per_cluster, rng))
    ap_positions = np.vstack([serving] + neighbor)

    desired = np.array(UE_PRESETS[config.ue_preset])
    others = _uniform_disk((0.0, 0.0), config.serving_radius, config.K_n, rng)
    known = np.vstack([desired[np.newaxis, :], others])
    unknown = drop_unknown_ues(config, rng)
    return Geometry(
        ap_positions=ap_positions,
        serving_set=np.arange(config.L_s),
        known_ue_positions=known,
        unknown_ue_positions=unknown,
        desired_ue_index=0,
    )


def drop_unknown_ues(config, rng):
    """K_u points uniform by area on the annulus (inverse-CDF in r^2)."""
    r_min, r_max = config.annulus
    u = rng.uniform(size=config.K_u)
    r = np.sqrt(r_min ** 2 + u * (r_max ** 2 - r_min ** 2))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=config.K_u)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def pathloss_db(d, model=None):
    """Distance-dependent pathloss in dB; rejects nonpositive distances."""
    model = model or PathlossModel()
    d_arr = np.asarray(d, dtype=np.float64)
    if np.any(d_arr <= 0.0):
        raise ValueError("pathloss requires d > 0")
    return model.intercept_db - model.exponent_decades * np.log10(d_arr)


def shadowing_covariance(positions, model):
    """UE-UE shadowing covariance std^2 * 2^(-delta/decorrelation), dB^2."""
    pos = np.asarray(positions, dtype=np.float64)
    delta = np.linalg.norm(pos[:, np.newaxis, :] - pos[np.newaxis, :, :],
                           axis=-1)
    return model.std_db ** 2 * 2.0 ** (-delta / model.decorrelation_m)


def _cholesky_with_jitter(cov, model):
    """Cholesky factor; one diagonal-jitter retry on numerical indefiniteness."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-9 * model.std_db ** 2
        return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))


def sample_shadowing(geometry, config, rng, size=None):
    """Shadowing matrix F (UE x AP), correlated across UEs per AP.

    Covers all UEs in the geometry (known first, then unknown) and all APs;
    draws are independent across APs.  ``size`` adds a leading batch axis.
    """
    positions = np.vstack([geometry.known_ue_positions,
                           geometry.unknown_ue_positions])
    return shadowing_batch(positions, geometry.ap_positions.shape[0],
                           config.shadowing, rng, size)


def shadowing_batch(positions, n_ap, model, rng, size=None):
    chol = _cholesky_with_jitter(shadowing_covariance(positions, model), model)
    n_ue = len(positions)
    shape = (n_ue, n_ap) if size is None else (size, n_ue, n_ap)
    z = rng.standard_normal(shape)
    return np.einsum("ij,...jl->...il", chol, z)


def conditional_shadowing(known_positions, f_known, new_positions, model, rng):
    """Shadowing for fresh UEs conditioned on the fixed known-UE shadowing.

    Per AP (columns of ``f_known``): the joint field over known + new UEs is
    zero-mean Gaussian with the covariance above, so new values are drawn
    from the conditional N(C_uk C_kk^-1 f, C_uu - C_uk C_kk^-1 C_ku).
    """
    known = np.asarray(known_positions, dtype=np.float64)
    new = np.asarray(new_positions, dtype=np.float64)
    if new.shape[0] == 0:
        return np.zeros((0, f_known.shape[1]))
    both = np.vstack([known, new])
    cov = shadowing_covariance(both, model)
    n_k = known.shape[0]
    c_kk = cov[:n_k, :n_k]
    c_uk = cov[n_k:, :n_k]
    c_uu = cov[n_k:, n_k:]
    gain = np.linalg.solve(c_kk, c_uk.T).T            # C_uk C_kk^-1
    mean = gain @ f_known                             # (n_new, n_ap)
    schur = c_uu - gain @ c_uk.T
    schur = 0.5 * (schur + schur.T)
    chol = _cholesky_with_jitter(schur, model)
    z = rng.standard_normal((new.shape[0], f_known.shape[1]))
    return mean + chol @ z


def large_scale_gains(geometry, f_matrix, config):
    """Linear average gains beta = 10^((pathloss + F)/10) over all UE/AP pairs."""
    positions = np.vstack([geometry.known_ue_positions,
                           geometry.unknown_ue_positions])
    d = np.linalg.norm(positions[:, np.newaxis, :]
                       - geometry.ap_positions[np.newaxis, :, :], axis=-1)
    beta_db = pathloss_db(d, config.pathloss) + f_matrix
    return LargeScale(beta=10.0 ** (beta_db / 10.0), d=d, F=f_matrix)
