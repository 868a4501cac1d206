"""Large-scale fading, spatial correlation matrices and channel realizations.

Path loss follows the 3GPP urban-microcell NLOS model at the configured
carrier frequency, with spatially correlated log-normal shadowing
(exponential kernel over UE-UE wrap distances, independent across APs).
Per AP-UE pair the antenna correlation R is a local-scattering model on a
half-wavelength uniform linear array with Gaussian angular spread, so each
R carries the low-rank structure the analog beamformer designs exploit.
Channels are h ~ CN(0, R), drawn i.i.d. per coherence block from seeded,
non-overlapping streams.
"""

from dataclasses import dataclass

import numpy as np

from .util import ConfigError, crandn, derive_rng, herm
from .scenario import cross_distances, wrap_displacement


def pathloss_db(d, carrier_freq_ghz):
    """UMi NLOS path loss in dB: 36.7*log10(d) + 22.7 + 26*log10(f_c).

    Distances are clamped below at 1 m to avoid the log singularity.
    """
    d = np.maximum(np.asarray(d, dtype=float), 1.0)
    return 36.7 * np.log10(d) + 22.7 + 26.0 * np.log10(carrier_freq_ghz)


def large_scale_gain(d, carrier_freq_ghz):
    """Linear power gain 10^(-PL/10) for the UMi path loss."""
    return 10.0 ** (-pathloss_db(d, carrier_freq_ghz) / 10.0)


def correlated_shadowing(topology, sigma_db, decorr_dist, rng):
    """(M, K) shadow-fading offsets in dB.

    Per AP, the offsets across UEs are jointly Gaussian with covariance
    sigma_db^2 * exp(-d/decorr) built from UE-UE wrap distances; APs see
    independent draws. sigma_db = 0 returns exact zeros.
    """
    m = topology.ap_positions.shape[0]
    k = topology.ue_positions.shape[0]
    if sigma_db == 0.0:
        return np.zeros((m, k))
    d = cross_distances(topology.ue_positions, topology.ue_positions, topology.area_side)
    cov = sigma_db**2 * np.exp(-d / decorr_dist)
    # exponential kernel is PSD; tiny jitter guards the factorization
    chol = np.linalg.cholesky(cov + 1e-12 * sigma_db**2 * np.eye(k))
    return rng.standard_normal((m, k)) @ chol.T


def bearing_angles(topology):
    """(M, K) AP-to-UE bearings (radians) using the nearest toroidal image."""
    disp = wrap_displacement(topology.ap_positions[:, None, :], topology.ue_positions[None, :, :],
                             topology.area_side)
    return np.arctan2(disp[..., 1], disp[..., 0])


def local_scattering(beta, theta, spread_rad, n):
    """Local-scattering correlation for a half-wavelength ULA.

    Entry (a, b) is beta * exp(j*pi*(a-b)*sin(theta)) *
    exp(-spread^2 * pi^2 * (a-b)^2 * cos(theta)^2 / 2); trace is n*beta.
    spread_rad=None (or inf) gives the fully decorrelated limit beta*I;
    spread_rad=0 gives the rank-one steering-vector outer product.
    """
    if spread_rad is None or np.isinf(spread_rad):
        return beta * np.eye(n, dtype=complex)
    delta = np.arange(n)[:, None] - np.arange(n)[None, :]
    phase = np.exp(1j * np.pi * delta * np.sin(theta))
    damp = np.exp(-0.5 * (spread_rad * np.pi * delta * np.cos(theta)) ** 2)
    return beta * phase * damp


@dataclass(frozen=True)
class CorrelationSet:
    """Spatial correlations R[m,k] with cached eigendecompositions.

    eigvals are sorted descending and clamped at zero; eigvecs columns are the
    matching eigenvectors, so R = V diag(lam) V^* per pair.
    """

    R: np.ndarray        # (M, K, N, N) complex Hermitian PSD
    beta: np.ndarray     # (M, K) large-scale gains, beta = tr(R)/N
    eigvals: np.ndarray  # (M, K, N) descending, >= 0
    eigvecs: np.ndarray  # (M, K, N, N) unitary columns

    @property
    def shape(self):
        return self.R.shape[:2]

    @property
    def num_antennas(self):
        return self.R.shape[-1]


def correlation_set_from_matrices(R):
    """Validate, symmetrize and eigendecompose a stack of correlation matrices."""
    R = np.asarray(R, dtype=complex)
    defect = np.linalg.norm(R - np.conj(np.swapaxes(R, -1, -2)), axis=(-2, -1))
    scale = np.maximum(np.linalg.norm(R, axis=(-2, -1)), 1e-300)
    if np.any(defect / scale > 1e-10):
        raise ConfigError("correlation matrix not Hermitian")
    R = herm(R)
    lam, vec = np.linalg.eigh(R)
    if np.any(lam < -1e-9 * np.maximum(lam.max(axis=-1, keepdims=True), 1e-300)):
        raise ConfigError("correlation matrix not positive semidefinite")
    lam = np.clip(lam[..., ::-1], 0.0, None)          # descending, clamped
    vec = vec[..., ::-1]
    beta = np.real(np.trace(R, axis1=-2, axis2=-1)) / R.shape[-1]
    return CorrelationSet(R=R, beta=beta, eigvals=lam, eigvecs=vec)


def build_correlations(topology, scenario, rng=None):
    """Assemble the full (M, K) correlation set for a topology.

    Large-scale gain combines UMi path loss over the 3-D distance (wrap-around
    horizontal distance plus AP height) with correlated shadowing; the antenna
    correlation uses the geometric AP-to-UE bearing and the configured angular
    spread.
    """
    rng = rng if rng is not None else derive_rng(scenario.rng_seed, 1)
    d2 = cross_distances(topology.ap_positions, topology.ue_positions, scenario.area_side)
    d3 = np.hypot(d2, scenario.ap_height)
    shadow = correlated_shadowing(topology, scenario.shadow_sigma_db, scenario.shadow_decorr, rng)
    beta = large_scale_gain(d3, scenario.carrier_freq) * 10.0 ** (shadow / 10.0)
    theta = bearing_angles(topology)
    spread = np.deg2rad(scenario.angle_spread_deg)
    n = scenario.antennas_per_ap
    m, k = beta.shape
    R = np.empty((m, k, n, n), dtype=complex)
    for i in range(m):
        for j in range(k):
            R[i, j] = local_scattering(beta[i, j], theta[i, j], spread, n)
    return correlation_set_from_matrices(R)


def sample_channels(correlations, seed, block_index, n_blocks=1):
    """Draw channels h[b,m,k] ~ CN(0, R[m,k]) for n_blocks coherence blocks.

    Block b uses the stream derived from (seed, block_index + b), so the same
    (seed, block) pair always reproduces the same draw and disjoint block
    ranges never share randomness.
    """
    m, k = correlations.shape
    n = correlations.num_antennas
    root = np.sqrt(correlations.eigvals)                      # (M, K, N)
    h = np.empty((n_blocks, m, k, n), dtype=complex)
    for b in range(n_blocks):
        w = crandn(derive_rng(seed, 2, block_index + b), m, k, n)
        h[b] = np.einsum("mkab,mkb->mka", correlations.eigvecs, root * w)
    return h


def noise_matrices(shape_mnt, sigma2, seed, block_index, n_blocks=1):
    """Fresh receiver noise Z[b,m] ~ CN(0, sigma2 I) of shape (M, N, tau) per block."""
    m, n, tau = shape_mnt
    z = np.empty((n_blocks, m, n, tau), dtype=complex)
    for b in range(n_blocks):
        z[b] = np.sqrt(sigma2) * crandn(derive_rng(seed, 3, block_index + b), m, n, tau)
    return z


def save_correlations(path, correlations):
    """Serialize a CorrelationSet to a .npz bundle (keys: R, beta)."""
    np.savez_compressed(path, R=correlations.R, beta=correlations.beta)


def load_correlations(path):
    """Load a CorrelationSet bundle written by save_correlations."""
    with np.load(path) as data:
        return correlation_set_from_matrices(data["R"])
