"""Local combining, LSFD fusion at the CPU, and Monte Carlo SINR statistics.

The block engine samples coherence blocks in fixed-size batches: draw all
channels, run the pilot phase, form per-AP combiners and accumulate the
receive-combined channel products g_ki = sqrt(p_i) v_l^H h_il.  Everything
downstream -- LSFD weights, the SINR decomposition, per-AP unknown
interference powers and the unknown covariance matrix -- is a reduction of
those products.  Batches use numpy's pairwise summation and a fixed chunk
size, so results are reproducible bit-for-bit for a given seed regardless
of how drops are scheduled across workers.
"""

from dataclasses import dataclass

import numpy as np

from . import channel as chan
from . import scenario as scen

BLOCK_CHUNK = 256

# RNG substream purposes (spawn keys are (seed, purpose, index...))
STREAM_BUILD = 0
STREAM_STATS = 1
STREAM_FIT = 2
STREAM_VALIDATE = 3


class NumericalFailure(RuntimeError):
    """A Monte Carlo estimate violated a structural invariant."""


@dataclass
class CombinedChannelStats:
    """Fading-averaged statistics of the combined channels at the CPU."""

    mean_g_kk: np.ndarray       # (L_s,) complex, E{g_kk}
    second_moments: np.ndarray  # (n_known, L_s, L_s) complex, E{g_ki g_ki^H}
    noise_diag: np.ndarray      # (L_s,) diagonal of F_k = sigma2 E{||v||^2}
    n_mc: int

    def __post_init__(self):
        if np.any(self.noise_diag <= 0.0):
            raise NumericalFailure("processed-noise diagonal must be positive")
        tr = np.trace(self.second_moments, axis1=-2, axis2=-1).real
        vals = np.linalg.eigvalsh(self.second_moments)
        if np.any(vals < -1e-9 * np.maximum(tr, 1e-300)[:, np.newaxis]):
            raise NumericalFailure("second-moment matrix is not PSD")


@dataclass
class SinrDecomposition:
    """Terms of the effective SINR at the CPU (all powers in mW)."""

    a: np.ndarray           # (L_s,) LSFD weights
    DS: complex             # a^H E{g_kk}
    IUSI: float             # known interference + self-interference
    noise_term: float       # a^H F_k a
    IUI_true: float = 0.0   # omniscient unknown interference, per drop
    weights_sq: np.ndarray = None  # |a_l|^2

    def sinr(self, iui=None):
        iui = self.IUI_true if iui is None else iui
        return abs(self.DS) ** 2 / (iui + self.IUSI + self.noise_term)


@dataclass
class BlockAverages:
    n: int
    mean_g_desired: np.ndarray = None
    outer_known: np.ndarray = None
    mean_vnorm2: np.ndarray = None
    outer_unknown: np.ndarray = None
    power_unknown: np.ndarray = None


def mr_combiner(hhat):
    """v = hhat / ||hhat||^2, so v^H hhat = 1 exactly."""
    n2 = np.real(np.vdot(hhat, hhat))
    if n2 < 1e-300:
        raise NumericalFailure("degenerate channel estimate in MR combiner")
    return hhat / n2


def rzf_combiner(estimates, p, sigma2, k_idx):
    """Regularized zero-forcing over the known-UE estimates at one AP.

    v = (sum_i p_i hhat_i hhat_i^H + sigma2 I)^-1 p_k hhat_k, via a
    Hermitian solve.
    """
    estimates = np.asarray(estimates)
    n_ant = estimates.shape[1]
    z = np.einsum("i,in,im->nm", p, estimates, np.conj(estimates))
    z += sigma2 * np.eye(n_ant)
    return np.linalg.solve(z, p[k_idx] * estimates[k_idx])


def _combiners_batch(stats, hhat, combiner, d_pos):
    """Per-block combiners (B, L_s, N) from the known-UE estimates."""
    if combiner == "MR":
        hd = hhat[:, d_pos]
        n2 = np.sum(np.abs(hd) ** 2, axis=-1, keepdims=True)
        if np.any(n2 < 1e-300):
            raise NumericalFailure("degenerate channel estimate in MR combiner")
        return hd / n2
    if combiner == "RZF":
        p_known = stats.p[stats.known_set]
        z = np.einsum("i,bilm,biln->blmn", p_known, hhat, np.conj(hhat),
                      optimize=True)
        n_ant = stats.n_antennas
        z += stats.sigma2 * np.eye(n_ant)
        rhs = p_known[d_pos] * hhat[:, d_pos]
        return np.linalg.solve(z, rhs[..., np.newaxis])[..., 0]
    raise ValueError(f"unknown combiner {combiner!r}")


def run_blocks(stats, combiner, n_blocks, rng, *, collect_known=True,
               collect_unknown=True, perfect_csi=False, fixed_combiner=None):
    """Monte Carlo over coherence blocks; returns fading-averaged products."""
    n_known = stats.known_set.size
    n_ap, n_ant = stats.n_ap, stats.n_antennas
    d_pos = int(np.flatnonzero(stats.known_set == stats.desired)[0])
    members = stats.pilot_members()
    coef = [np.sqrt(stats.tau_p * stats.p[m]) for m in members]
    sqrt_p = np.sqrt(stats.p)
    rs_flat = np.ascontiguousarray(
        stats.R_sqrt.reshape(stats.n_ue * n_ap, n_ant, n_ant).swapaxes(-1, -2))
    est_flat = np.ascontiguousarray(
        stats.est_mat.reshape(n_known * n_ap, n_ant, n_ant).swapaxes(-1, -2))

    sum_g_desired = np.zeros(n_ap, dtype=np.complex128)
    sum_outer_known = np.zeros((n_known, n_ap, n_ap), dtype=np.complex128)
    sum_vnorm2 = np.zeros(n_ap)
    sum_outer_unknown = np.zeros((n_ap, n_ap), dtype=np.complex128)
    sum_power_unknown = np.zeros(n_ap)

    done = 0
    while done < n_blocks:
        b = min(BLOCK_CHUNK, n_blocks - done)
        done += b
        w = chan._std_complex_normal(rng, (b, stats.n_ue, n_ap, n_ant))
        h = (w.transpose(1, 2, 0, 3).reshape(stats.n_ue * n_ap, b, n_ant)
             @ rs_flat)
        h = h.reshape(stats.n_ue, n_ap, b, n_ant).transpose(2, 0, 1, 3)

        if fixed_combiner is not None:
            v = np.broadcast_to(fixed_combiner, (b, n_ap, n_ant))
        else:
            if stats.sigma2 > 0.0:
                y = np.sqrt(stats.sigma2) * chan._std_complex_normal(
                    rng, (b, stats.tau_p, n_ap, n_ant))
            else:
                y = np.zeros((b, stats.tau_p, n_ap, n_ant),
                             dtype=np.complex128)
            for t in range(stats.tau_p):
                if members[t].size:
                    y[:, t] += np.einsum("i,biln->bln", coef[t],
                                         h[:, members[t]])
            if perfect_csi:
                hhat = h[:, stats.known_set]
            else:
                y_sel = y[:, stats.pilot_of[stats.known_set]]
                hh = (y_sel.transpose(1, 2, 0, 3)
                      .reshape(n_known * n_ap, b, n_ant) @ est_flat)
                hhat = hh.reshape(n_known, n_ap, b, n_ant).transpose(2, 0, 1, 3)
            v = _combiners_batch(stats, hhat, combiner, d_pos)

        sum_vnorm2 += np.sum(np.abs(v) ** 2, axis=(0, 2))
        vc = np.conj(v)
        if collect_known:
            gk = np.einsum("bln,biln->bil", vc, h[:, stats.known_set],
                           optimize=True) * sqrt_p[stats.known_set][:, None]
            sum_g_desired += gk[:, d_pos].sum(axis=0)
            sum_outer_known += np.einsum("bil,bim->ilm", gk, np.conj(gk),
                                         optimize=True)
        if collect_unknown and stats.unknown_set.size:
            gu = np.einsum("bln,biln->bil", vc, h[:, stats.unknown_set],
                           optimize=True) * sqrt_p[stats.unknown_set][:, None]
            sum_outer_unknown += np.einsum("bil,bim->lm", gu, np.conj(gu),
                                           optimize=True)
            sum_power_unknown += np.einsum("bil,bil->l", gu,
                                           np.conj(gu)).real

    inv_n = 1.0 / n_blocks
    return BlockAverages(
        n=n_blocks,
        mean_g_desired=sum_g_desired * inv_n if collect_known else None,
        outer_known=sum_outer_known * inv_n if collect_known else None,
        mean_vnorm2=sum_vnorm2 * inv_n,
        outer_unknown=sum_outer_unknown * inv_n,
        power_unknown=sum_power_unknown * inv_n,
    )


def combined_channel_stats(stats, combiner, n_mc, rng, perfect_csi=False):
    """Estimate E{g_kk}, E{g_ki g_ki^H} for known i, and the noise diagonal."""
    if n_mc < 100:
        raise ValueError("n_mc must be at least 100")
    acc = run_blocks(stats, combiner, n_mc, rng, collect_unknown=False,
                     perfect_csi=perfect_csi)
    return CombinedChannelStats(
        mean_g_kk=acc.mean_g_desired,
        second_moments=_hermitize(acc.outer_known),
        noise_diag=stats.sigma2 * acc.mean_vnorm2,
        n_mc=n_mc,
    )


def _hermitize(m):
    return 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))


def lsfd_weights(cstats):
    """a = (sum_i E{g_ki g_ki^H} + F)^(-1) E{g_kk} from known statistics."""
    gram = cstats.second_moments.sum(axis=0) + np.diag(
        cstats.noise_diag.astype(np.complex128))
    return np.linalg.solve(gram, cstats.mean_g_kk)


def sinr_decomposition(cstats, a, unknown_cov=None):
    """Assemble DS, IUSI, the processed-noise term and (if a drop's unknown
    covariance is supplied) the omniscient unknown interference power."""
    a = np.asarray(a, dtype=np.complex128)
    ds = complex(np.vdot(a, cstats.mean_g_kk))
    total_known = float(np.real(
        np.einsum("l,ilm,m->", np.conj(a), cstats.second_moments, a)))
    iusi = total_known - abs(ds) ** 2
    slack = 1e-9 * (total_known + abs(ds) ** 2 + 1e-300)
    if iusi < -slack:
        raise NumericalFailure(f"negative IUSI beyond slack: {iusi}")
    iusi = max(iusi, 0.0)
    noise_term = float(np.sum(np.abs(a) ** 2 * cstats.noise_diag))
    iui = 0.0
    if unknown_cov is not None:
        iui = float(np.real(np.conj(a) @ unknown_cov @ a))
    return SinrDecomposition(
        a=a, DS=ds, IUSI=iusi, noise_term=noise_term, IUI_true=iui,
        weights_sq=np.abs(a) ** 2,
    )


def per_ap_unknown_power(stats, combiner, n_mc, rng, fixed_combiner=None):
    """One sample of the per-AP unknown interference power vector.

    sum_{i in D_u} p_i E{|v_l^H h_il|^2} estimated over n_mc fading blocks,
    with the combiner re-formed each block from the pilot phase.
    """
    acc = run_blocks(stats, combiner, n_mc, rng, collect_known=False,
                     fixed_combiner=fixed_combiner)
    return acc.power_unknown


def unknown_covariance_matrix(stats, combiner, n_mc, rng,
                              fixed_combiner=None):
    """Monte Carlo estimate of sum_{i in D_u} E{g_ki g_ki^H} (L_s x L_s)."""
    acc = run_blocks(stats, combiner, n_mc, rng, collect_known=False,
                     fixed_combiner=fixed_combiner)
    return _hermitize(acc.outer_unknown)


def diagonality_ratio(unknown_cov):
    """max off-diagonal magnitude over min diagonal: the quality of the
    diagonal-covariance approximation (small is good)."""
    m = np.asarray(unknown_cov)
    if m.shape[0] == 1 or np.min(np.diag(m).real) <= 0.0:
        return 0.0
    off = np.abs(m - np.diag(np.diag(m))).max()
    return float(off / np.min(np.diag(m).real))


def se_from_sinr(sinr, tau_u, tau_c):
    """SE = (tau_u / tau_c) * log2(1 + SINR), bits/s/Hz."""
    if sinr < 0:
        raise ValueError("SINR must be nonnegative")
    return (tau_u / tau_c) * np.log2(1.0 + sinr)


@dataclass
class ScenarioModel:
    """Everything quasi-static for one scenario: geometry, statistics, the
    LSFD weights and the known-side SINR terms."""

    config: scen.ScenarioConfig
    combiner: str
    geometry: scen.Geometry
    large_scale: scen.LargeScale
    stats: chan.ChannelStatistics
    cstats: CombinedChannelStats
    decomp: SinrDecomposition
    ref_unknown_cov: np.ndarray

    @property
    def prelog(self):
        return self.config.prelog


def build_scenario_model(config, combiner, n_mc_stats=5000):
    """Fixed part of a scenario, seeded entirely by ``config.seed``.

    The known-side statistics are computed once with the geometry's
    reference unknown-UE drop present (they are quasi-static: contamination
    from distant unknown UEs perturbs them only marginally); per-drop
    variation enters through the unknown interference term alone.
    """
    rng = scen.substream(config.seed, STREAM_BUILD)
    geometry = scen.place_network(config, rng)
    f_matrix = scen.sample_shadowing(geometry, config, rng)
    large_scale = scen.large_scale_gains(geometry, f_matrix, config)
    stats = chan.build_channel_statistics(geometry, large_scale, config, rng)
    rng_stats = scen.substream(config.seed, STREAM_STATS)
    acc = run_blocks(stats, combiner, n_mc_stats, rng_stats)
    cstats = CombinedChannelStats(
        mean_g_kk=acc.mean_g_desired,
        second_moments=_hermitize(acc.outer_known),
        noise_diag=config.sigma2 * acc.mean_vnorm2,
        n_mc=n_mc_stats,
    )
    a = lsfd_weights(cstats)
    ref_cov = _hermitize(acc.outer_unknown)
    decomp = sinr_decomposition(cstats, a, unknown_cov=ref_cov)
    return ScenarioModel(
        config=config,
        combiner=combiner,
        geometry=geometry,
        large_scale=large_scale,
        stats=stats,
        cstats=cstats,
        decomp=decomp,
        ref_unknown_cov=ref_cov,
    )


@dataclass
class DropResult:
    unknown_cov: np.ndarray
    per_ap_power: np.ndarray
    iui_true: float
    diag_ratio: float


def simulate_unknown_drop(model, stream, index, n_mc):
    """Fresh unknown-UE drop: positions, shadowing (conditioned on the fixed
    known-UE field), pilots, and the fading-averaged interference moments."""
    config = model.config
    rng = scen.substream(config.seed, stream, index)
    positions = scen.drop_unknown_ues(config, rng)
    serving = model.geometry.serving_set
    f_known = model.large_scale.F[:config.n_known, serving]
    f_new = scen.conditional_shadowing(
        model.geometry.known_ue_positions, f_known, positions,
        config.shadowing, rng)
    d = np.linalg.norm(
        positions[:, np.newaxis, :]
        - model.geometry.serving_positions[np.newaxis, :, :], axis=-1)
    beta_db = scen.pathloss_db(d, config.pathloss) + f_new
    beta_u = 10.0 ** (beta_db / 10.0)
    r_u = chan.correlation_matrices(
        model.geometry.serving_positions, positions, beta_u, config.N,
        config.asd_deg, config.corr_model)
    pilots_u = rng.integers(0, config.tau_p, size=config.K_u)
    p_u = np.full(config.K_u, config.p_mw)
    stats_drop = model.stats.with_new_unknowns(r_u, beta_u, pilots_u, p_u)
    acc = run_blocks(stats_drop, model.combiner, n_mc, rng,
                     collect_known=False)
    cov = _hermitize(acc.outer_unknown)
    a = model.decomp.a
    iui = float(np.real(np.conj(a) @ cov @ a))
    return DropResult(
        unknown_cov=cov,
        per_ap_power=acc.power_unknown,
        iui_true=iui,
        diag_ratio=diagonality_ratio(cov),
    )
