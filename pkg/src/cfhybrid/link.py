"""Exact link-level evaluation per coherence block.

Uplink: the per-UE MMSE combiner SINR is evaluated in closed form as the
quadratic form p_k ghat_k^* A_k^{-1} ghat_k over the rows of the UE's serving
APs, where A_k collects the masked interfering estimates plus the effective
noise covariance (estimation errors, disregarded UEs, colored thermal noise).

Downlink: subset RZF precoding with per-UE power normalization
E{||W v_k||^2} = 1 calibrated on an independent Monte Carlo ensemble, and the
SINR assembled from sample means/variances of the received gains.
"""

from dataclasses import dataclass

import numpy as np

from .util import ConfigError, herm


def effective_noise_blocks(stats, service_map, powers, sigma2):
    """Per-AP L x L effective-noise covariance blocks.

    Sigma_m = sum_{i served by m} C[m,i] p_i + sum_{i not served} Rg[m,i] p_i
    + sigma2 * chain^* chain. The per-UE noise covariance Sigma_k is the
    block-diagonal of these over the UE's serving APs (the blocks themselves
    do not depend on k).
    """
    mask = service_map.mask.astype(float)
    powers = np.asarray(powers, dtype=float)
    served = np.einsum("mkab,mk,k->mab", stats.error_cov, mask, powers)
    other = np.einsum("mkab,mk,k->mab", stats.rg, 1.0 - mask, powers)
    return herm(served + other + sigma2 * stats.ee)


def _stack_rows(g, blocks):
    """(..., M, K, L) -> (..., n, K) with n = len(blocks)*L, rows of the given APs."""
    sub = g[..., blocks, :, :]                       # (..., B, K, L)
    sub = np.swapaxes(sub, -1, -2)                   # (..., B, L, K)
    return sub.reshape(sub.shape[:-3] + (len(blocks) * sub.shape[-2], sub.shape[-1]))


def ul_mmse_sinr(ghat, sigma_blocks, service_map, powers):
    """Per-UE uplink MMSE SINR for a batch of blocks.

    ghat has shape (B, M, K, L) (estimates of the block, all pairs); entries
    of UEs at non-serving APs are masked out. Returns (B, K).
    """
    ghat = np.asarray(ghat)
    squeeze = ghat.ndim == 3
    if squeeze:
        ghat = ghat[None]
    nb, m, k, l = ghat.shape
    powers = np.asarray(powers, dtype=float)
    masked = ghat * service_map.mask[None, :, :, None]
    sinr = np.zeros((nb, k))
    for ue in range(k):
        aps = service_map.served_by[ue]
        if len(aps) == 0:
            continue
        u = _stack_rows(masked, aps)                            # (B, n, K)
        sig = np.zeros((len(aps) * l, len(aps) * l), dtype=complex)
        for i, ap in enumerate(aps):
            sig[i * l:(i + 1) * l, i * l:(i + 1) * l] = sigma_blocks[ap]
        gram = np.einsum("bni,i,bpi->bnp", u, powers, np.conj(u))
        own = u[..., ue]
        a = gram - powers[ue] * own[:, :, None] * np.conj(own[:, None, :]) + sig
        x = np.linalg.solve(a, own[..., None])[..., 0]
        sinr[:, ue] = powers[ue] * np.real(np.einsum("bn,bn->b", np.conj(own), x))
    return (sinr[0] if squeeze else sinr)


def perfect_csi_ul_sinr(g, ee, service_map, powers, sigma2):
    """UL MMSE SINR with perfect CSI: errors vanish, noise keeps its coloring."""
    mask = service_map.mask.astype(float)
    # disregarded UEs still contribute through their true covariance; with a
    # full service map this reduces to the colored thermal noise alone
    sigma_blocks = herm(sigma2 * ee)
    return ul_mmse_sinr(g, sigma_blocks, service_map, powers)


def rzf_directions(ghat, service_map, rho):
    """Unnormalized RZF precoders (GG^* + rho I)^{-1} G from masked estimates.

    ghat: (B, M, K, L). Returns (B, M*L, K).
    """
    ghat = np.asarray(ghat)
    nb, m, k, l = ghat.shape
    gm = np.swapaxes(ghat * service_map.mask[None, :, :, None], -1, -2).reshape(nb, m * l, k)
    gram = gm @ np.conj(np.swapaxes(gm, -1, -2)) + rho * np.eye(m * l)
    return np.linalg.solve(gram, gm)


def chain_output_power(dirs, ee):
    """||W v||^2 per (block, UE) for RF-domain vectors: sum_m v_m^* EE_m v_m."""
    nb, ml, k = dirs.shape
    m = ee.shape[0]
    v = dirs.reshape(nb, m, ml // m, k)
    return np.real(np.einsum("bmlk,mln,bmnk->bk", np.conj(v), ee, v))


def rzf_normalizers(calib_dirs, ee):
    """Per-UE scale lambda_k so that E{||W v_k||^2} = 1 on the calibration ensemble.

    UEs whose precoder carries no energy (zero estimates throughout) get
    lambda = 0 instead of infinity.
    """
    mean_power = chain_output_power(calib_dirs, ee).mean(axis=0)
    lam = np.zeros_like(mean_power)
    ok = mean_power > 0
    lam[ok] = 1.0 / np.sqrt(mean_power[ok])
    return lam


@dataclass(frozen=True)
class DlSinrEstimate:
    """Monte Carlo estimate of the downlink RZF SINR and its ingredients."""

    sinr: np.ndarray            # (K,)
    mean_gain: np.ndarray       # (K,) complex, E{g_k^* v_k}
    mean_gain_se: np.ndarray    # (K,) standard error of mean_gain
    gain_variance: np.ndarray   # (K,) var(g_k^* v_k)
    interference: np.ndarray    # (K,) sum_{i != k} E{|g_k^* v_i|^2} p_i
    n_blocks: int


def dl_rzf_sinr_mc(g, dirs, lam, powers, sigma2):
    """Estimate the DL RZF SINR from an evaluation ensemble.

    g: (B, M, K, L) true effective channels; dirs: (B, M*L, K) unnormalized
    precoders of the same blocks; lam: (K,) normalizers. All expectations in
    the SINR are replaced by sample means over the B >= 10 blocks.
    """
    nb = g.shape[0]
    if nb < 10:
        raise ConfigError(f"dl evaluation needs at least 10 blocks, got {nb}")
    m, k, l = g.shape[1:]
    gflat = np.swapaxes(g, -1, -2).reshape(nb, m * l, k)
    cross = np.einsum("bqk,bqi->bki", np.conj(gflat), dirs) * lam[None, None, :]
    mean_c = cross.mean(axis=0)                                # (K, K)
    mean_sq = np.mean(np.abs(cross) ** 2, axis=0)              # (K, K)
    powers = np.asarray(powers, dtype=float)
    own_mean = np.diagonal(mean_c)
    own_sq = np.diagonal(mean_sq)
    var_own = np.maximum(own_sq - np.abs(own_mean) ** 2, 0.0)
    interference = mean_sq @ powers - np.diagonal(mean_sq) * powers
    num = np.abs(own_mean) ** 2 * powers
    sinr = num / (interference + var_own * powers + sigma2)
    se = np.sqrt(var_own / nb)
    return DlSinrEstimate(sinr=sinr, mean_gain=own_mean, mean_gain_se=se,
                          gain_variance=var_own, interference=interference, n_blocks=nb)


def spectral_efficiency(sinr, tau, tau_c):
    """SE with pilot overhead: (1 - tau/tau_c) * log2(1 + SINR).

    A 2-D input (blocks, K) is treated as per-block uplink SINRs and averaged
    after the log; a 1-D input is used directly (downlink convention).
    """
    sinr = np.asarray(sinr, dtype=float)
    if np.any(sinr < 0):
        raise ConfigError("SINR must be nonnegative")
    prefactor = 1.0 - tau / tau_c
    rates = np.log2(1.0 + sinr)
    if sinr.ndim == 2:
        rates = rates.mean(axis=0)
    return prefactor * rates
