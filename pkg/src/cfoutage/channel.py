"""Spatial correlation, correlated Rayleigh fading, pilots and estimation.

Channels are h ~ CN(0, R) per (UE, AP) pair.  R comes from a Gaussian
local-scattering model on a half-wavelength ULA: the steering-vector outer
product averaged over a Gaussian azimuth spread around the AP-to-UE bearing,
evaluated with a Gauss-Hermite rule (positive weights, so R is PSD by
construction, and its diagonal is exactly beta).  Channel estimation uses
only known-UE statistics: the inverse in the estimator covers the known
co-pilot UEs plus noise, so unknown contaminators bias the estimate -- that
bias is part of the system model, not a bug.
"""

from dataclasses import dataclass, replace

import numpy as np

N_GAUSS_HERMITE = 101


@dataclass
class ChannelStatistics:
    """Per-(UE, serving AP) second-order statistics and the pilot map.

    UEs are indexed known-first: 0 is the desired UE, 1..K_n the known
    interferers, the rest unknown.  ``est_mat[i, l]`` maps the received
    pilot signal at AP l to the channel estimate of known UE i.
    """

    R: np.ndarray           # (K, L_s, N, N) complex
    R_sqrt: np.ndarray      # (K, L_s, N, N) complex, R_sqrt @ R_sqrt^H = R
    beta: np.ndarray        # (K, L_s)
    pilot_of: np.ndarray    # (K,) int
    known_set: np.ndarray   # (n_known,) int
    unknown_set: np.ndarray  # (K_u,) int
    desired: int
    p: np.ndarray           # (K,) transmit powers, mW
    sigma2: float
    tau_p: int
    tau_c: int
    est_mat: np.ndarray     # (n_known, L_s, N, N) complex

    @property
    def n_ue(self):
        return self.R.shape[0]

    @property
    def n_ap(self):
        return self.R.shape[1]

    @property
    def n_antennas(self):
        return self.R.shape[3]

    def pilot_members(self):
        """List of UE index arrays per pilot."""
        return [np.flatnonzero(self.pilot_of == t) for t in range(self.tau_p)]

    def with_new_unknowns(self, r_unknown, beta_unknown, pilots_unknown,
                          p_unknown):
        """Fresh drop: replace the unknown tier, keep the known side shared."""
        n_known = self.known_set.size
        r_sqrt_u = psd_sqrt(r_unknown)
        return replace(
            self,
            R=np.concatenate([self.R[:n_known], r_unknown]),
            R_sqrt=np.concatenate([self.R_sqrt[:n_known], r_sqrt_u]),
            beta=np.concatenate([self.beta[:n_known], beta_unknown]),
            pilot_of=np.concatenate([self.pilot_of[:n_known], pilots_unknown]),
            unknown_set=n_known + np.arange(len(r_unknown)),
            p=np.concatenate([self.p[:n_known], p_unknown]),
        )


def steering_vector(theta, n_antennas):
    """Half-wavelength ULA response, e^(j*pi*m*sin(theta))."""
    m = np.arange(n_antennas)
    return np.exp(1j * np.pi * np.multiply.outer(np.sin(theta), m))


def correlation_matrix(ap_pos, ue_pos, beta, n_antennas, asd_deg=15.0,
                       model="gaussian-local-scattering"):
    """Spatial correlation matrix with tr(R)/N = beta exactly."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    if model == "uncorrelated":
        return beta * np.eye(n_antennas, dtype=np.complex128)
    if model != "gaussian-local-scattering":
        raise ValueError(f"unknown correlation model {model!r}")
    delta = np.asarray(ue_pos, dtype=float) - np.asarray(ap_pos, dtype=float)
    theta0 = np.arctan2(delta[1], delta[0])
    return beta * _local_scattering_unit(
        np.array([theta0]), n_antennas, asd_deg)[0]


def _local_scattering_unit(theta0, n_antennas, asd_deg):
    """Unit-gain local-scattering matrices for an array of bearings.

    Gauss-Hermite average of a(theta) a(theta)^H over
    theta ~ N(theta0, asd^2); weights are normalized to sum to one so the
    diagonal is exactly 1.
    """
    nodes, weights = np.polynomial.hermite_e.hermegauss(N_GAUSS_HERMITE)
    weights = weights / weights.sum()
    asd = np.deg2rad(asd_deg)
    theta = theta0[:, np.newaxis] + asd * nodes[np.newaxis, :]  # (n, q)
    a = steering_vector(theta.ravel(), n_antennas).reshape(
        theta.shape[0], theta.shape[1], n_antennas)
    return np.einsum("q,nqi,nqj->nij", weights, a, np.conj(a), optimize=True)


def correlation_matrices(ap_positions, ue_positions, beta, n_antennas,
                         asd_deg=15.0, model="gaussian-local-scattering"):
    """(n_ue, n_ap, N, N) stack of correlation matrices."""
    ue = np.asarray(ue_positions, dtype=float)
    ap = np.asarray(ap_positions, dtype=float)
    n_ue, n_ap = ue.shape[0], ap.shape[0]
    if model == "uncorrelated":
        eye = np.eye(n_antennas, dtype=np.complex128)
        return beta[..., np.newaxis, np.newaxis] * eye
    delta = ue[:, np.newaxis, :] - ap[np.newaxis, :, :]
    theta0 = np.arctan2(delta[..., 1], delta[..., 0]).ravel()
    units = _local_scattering_unit(theta0, n_antennas, asd_deg)
    units = units.reshape(n_ue, n_ap, n_antennas, n_antennas)
    return beta[..., np.newaxis, np.newaxis] * units


def psd_sqrt(r, rel_tol=1e-12):
    """Hermitian square root of a (stack of) PSD matrices.

    Eigenvalues in [-rel_tol*scale, 0) are clipped to zero; anything below
    -1e-9*scale (scale = tr/N) is a genuine indefiniteness and raises.
    """
    r_arr = np.asarray(r, dtype=np.complex128)
    vals, vecs = np.linalg.eigh(r_arr)
    scale = np.trace(r_arr, axis1=-2, axis2=-1).real / r_arr.shape[-1]
    floor = -1e-9 * np.maximum(scale, 1e-300)
    if np.any(vals < floor[..., np.newaxis]):
        raise np.linalg.LinAlgError("correlation matrix is not PSD")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)[..., np.newaxis, :]) @ np.conj(
        np.swapaxes(vecs, -1, -2))


def sample_channel(r, rng, size=None):
    """h = R^(1/2) w with w standard complex Gaussian."""
    a = psd_sqrt(r)
    n = a.shape[-1]
    shape = (n,) if size is None else (size, n)
    w = _std_complex_normal(rng, shape)
    return w @ a.T if size is not None else a @ w


def _std_complex_normal(rng, shape):
    z = rng.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)


def assign_pilots(beta, known_set, unknown_set, tau_p, rng, p=None):
    """Pilot map: greedy contamination-avoiding for known UEs, uniform for
    unknown UEs.

    Known UEs in descending order of max-over-serving-APs beta: the first
    tau_p get orthogonal pilots; each remaining UE picks the pilot with the
    least summed received pilot power p_i * beta_i at its strongest AP.
    """
    beta = np.asarray(beta)
    n_ue = beta.shape[0]
    if p is None:
        p = np.ones(n_ue)
    if not tau_p < len(known_set):
        raise ValueError("requires tau_p < |D_n| (pilot shortage regime)")
    pilot_of = np.full(n_ue, -1, dtype=np.int64)
    strength = beta[known_set].max(axis=1)
    order = np.asarray(known_set)[np.argsort(-strength)]
    received = np.zeros((tau_p, beta.shape[1]))  # summed p*beta per pilot/AP
    for rank, k in enumerate(order):
        if rank < tau_p:
            t = rank
        else:
            l_star = int(np.argmax(beta[k]))
            t = int(np.argmin(received[:, l_star]))
        pilot_of[k] = t
        received[t] += p[k] * beta[k]
    if len(unknown_set):
        pilot_of[np.asarray(unknown_set)] = rng.integers(
            0, tau_p, size=len(unknown_set))
    return pilot_of


def received_pilot(t, h, pilot_of, p, tau_p, sigma2, rng):
    """Despread pilot-t signal per AP: sum_i sqrt(tau_p p_i) h_il + noise.

    ``h`` is one block's channel stack (K, L_s, N); noise is CN(0, sigma2 I).
    """
    members = np.flatnonzero(np.asarray(pilot_of) == t)
    n_ap, n_ant = h.shape[1], h.shape[2]
    y = np.zeros((n_ap, n_ant), dtype=np.complex128)
    for i in members:
        y += np.sqrt(tau_p * p[i]) * h[i]
    if sigma2 > 0.0:
        y += np.sqrt(sigma2) * _std_complex_normal(rng, (n_ap, n_ant))
    return y


def estimation_matrices(r, pilot_of, known_set, p, sigma2, tau_p):
    """Linear MMSE-style estimation maps using known statistics only.

    B[i, l] = sqrt(tau_p p_i) R_il (sum_{j in P_t ∩ D_n} tau_p p_j R_jl
    + sigma2 I)^(-1); the inverse never sees unknown-UE statistics.
    """
    known = np.asarray(known_set)
    n_known = known.size
    n_ap, n_ant = r.shape[1], r.shape[3]
    eye = sigma2 * np.eye(n_ant, dtype=np.complex128)
    psi = np.empty((tau_p, n_ap, n_ant, n_ant), dtype=np.complex128)
    for t in range(tau_p):
        on_t = [k for k in known if pilot_of[k] == t]
        s = np.zeros((n_ap, n_ant, n_ant), dtype=np.complex128)
        for k in on_t:
            s += tau_p * p[k] * r[k]
        psi[t] = s + eye
    out = np.empty((n_known, n_ap, n_ant, n_ant), dtype=np.complex128)
    for idx, k in enumerate(known):
        t = pilot_of[k]
        # B = c * R @ Psi^-1 with both Hermitian: B = c * solve(Psi, R)^H
        sol = np.linalg.solve(psi[t], r[k])
        out[idx] = np.sqrt(tau_p * p[k]) * np.conj(np.swapaxes(sol, -1, -2))
    return out


def estimate_channel(y_t, k, stats):
    """Channel estimate of known UE k from its pilot observation (L_s, N)."""
    idx = int(np.flatnonzero(np.asarray(stats.known_set) == k)[0])
    return np.einsum("lnm,lm->ln", stats.est_mat[idx], y_t)


def build_channel_statistics(geometry, large_scale, config, rng):
    """Assemble statistics for the serving cluster from one geometry.

    Restricted to the serving APs (the only ones that decode); includes the
    geometry's unknown-UE drop as the reference interference environment.
    """
    serving = geometry.serving_set
    positions = np.vstack([geometry.known_ue_positions,
                           geometry.unknown_ue_positions])
    beta = large_scale.beta[:, serving]
    r = correlation_matrices(geometry.ap_positions[serving], positions, beta,
                             config.N, config.asd_deg, config.corr_model)
    n_known = geometry.known_ue_positions.shape[0]
    n_total = positions.shape[0]
    known_set = np.arange(n_known)
    unknown_set = np.arange(n_known, n_total)
    p = np.full(n_total, config.p_mw)
    pilot_of = assign_pilots(beta, known_set, unknown_set, config.tau_p,
                             rng, p)
    est = estimation_matrices(r, pilot_of, known_set, p, config.sigma2,
                              config.tau_p)
    return ChannelStatistics(
        R=r,
        R_sqrt=psd_sqrt(r),
        beta=beta,
        pilot_of=pilot_of,
        known_set=known_set,
        unknown_set=unknown_set,
        desired=geometry.desired_ue_index,
        p=p,
        sigma2=config.sigma2,
        tau_p=config.tau_p,
        tau_c=config.tau_c,
        est_mat=est,
    )
