"""Deterministic equivalents of the random SINR functionals.

The core is the classical resolvent approximation for matrices
(H H^* + S + z I)^{-1} whose columns h_k have covariance R_k / dim: traced
functionals converge to those of T = ((1/dim) sum_k R_k/(1+e_k) + S + z I)^{-1}
with coefficients e_k obtained by a provably convergent fixed point, and the
double-resolvent functionals to those of T'(z, Phi) = T Phi T + correction.

On top of this the uplink MMSE SINR approximation (per-UE restricted systems
over the serving APs) and the downlink RZF approximation (mu, delta, theta
scalars) are assembled. All network matrices are block diagonal per AP, so
every operation here works on stacks of L x L blocks; a dense problem is the
special case of a single block.

Normalization note: the per-iteration trace carries the 1/dim prefactor of
the generic resolvent theorem (so e_k equals the associated SINR/mu scalar);
dim is the analog-input dimension |F_k| N (uplink) or M N (downlink) even
though the post-combining matrices live in L-sized blocks.
"""

from dataclasses import dataclass

import numpy as np

from .util import NumericalError, herm
from .link import effective_noise_blocks


@dataclass(frozen=True)
class FixedPointState:
    """Converged coefficients of the resolvent fixed point."""

    e: np.ndarray             # (K,) nonnegative
    iterations: int
    residual: float
    converged: bool
    residual_trace: np.ndarray


@dataclass(frozen=True)
class DetEquivalents:
    """Downlink deterministic-equivalent ingredients (Theorem-2 style)."""

    z: float
    e: np.ndarray             # fixed-point coefficients (= mu)
    mu: np.ndarray            # (K,)
    delta: np.ndarray         # (K,)
    theta: np.ndarray         # (K, K), row k = interference seen by UE k
    t_blocks: np.ndarray      # (M, L, L) resolvent equivalent
    j_matrix: np.ndarray      # (K, K)
    state: FixedPointState


def _block_eye(b, n):
    return np.broadcast_to(np.eye(n), (b, n, n))


def fixed_point_e(r_set, s, z, dim, tol=1e-10, max_iters=500,
                  damping=0.5, oscillation_window=20):
    """Iterate e_k = (1/dim) tr[R_k ((1/dim) sum_j R_j/(1+e_j) + S + z I)^{-1}].

    r_set: (K, B, n, n) stack of block-diagonal Hermitian PSD matrices
    (B blocks of size n); s: (B, n, n) or 0; z >= 0 with S + zI positive
    definite. Starts from e = dim as in the generic theorem. If the residual
    stalls for `oscillation_window` iterations, a relaxation factor is engaged.

    Returns (state, t_blocks) with t_blocks the (B, n, n) equivalent resolvent.
    Raises NumericalError (carrying the residual trace) on non-convergence.
    """
    r_set = np.asarray(r_set, dtype=complex)
    k, b, n = r_set.shape[0], r_set.shape[1], r_set.shape[2]
    s_term = (np.zeros((b, n, n)) if np.isscalar(s) and s == 0 else np.asarray(s, dtype=complex))
    s_term = s_term + z * _block_eye(b, n)
    e = np.full(k, float(dim))
    residuals = []
    relax = 1.0
    t = None
    for it in range(1, max_iters + 1):
        denom = np.tensordot(1.0 / (dim * (1.0 + e)), r_set, axes=(0, 0)) + s_term
        t = np.linalg.inv(denom)
        e_new = np.real(np.einsum("kbij,bji->k", r_set, t)) / dim
        res = float(np.max(np.abs(e_new - e) / (1.0 + np.abs(e_new))))
        residuals.append(res)
        if relax == 1.0 and it > oscillation_window and res >= residuals[-1 - oscillation_window]:
            relax = damping
        e = relax * e_new + (1.0 - relax) * e
        if res <= tol:
            state = FixedPointState(e=e, iterations=it, residual=res, converged=True,
                                    residual_trace=np.asarray(residuals))
            denom = np.tensordot(1.0 / (dim * (1.0 + e)), r_set, axes=(0, 0)) + s_term
            return state, np.linalg.inv(denom)
    err = NumericalError(f"resolvent fixed point did not converge in {max_iters} iterations "
                         f"(residual {residuals[-1]:.3e})")
    err.residual_trace = np.asarray(residuals)
    raise err


def e_prime(r_set, t_blocks, e, phi, dim):
    """Solve e' = (I - J)^{-1} v for the derivative coefficients.

    J[k,l] = (1/dim) tr[R_k T R_l T] / (dim (1+e_l)^2) and
    v[k] = (1/dim) tr[R_k T Phi T]. Raises when the fixed point is not
    contractive (spectral radius of J >= 1).

    Returns (e_prime, j_matrix, v).
    """
    x = np.einsum("kbij,bjl->kbil", r_set, t_blocks)        # R_k T per block
    j0 = np.real(np.einsum("kbij,lbji->kl", x, x)) / dim
    j = j0 / (dim * (1.0 + e) ** 2)[None, :]
    y = np.einsum("bij,bjl->bil", np.einsum("bij,bjl->bil", t_blocks, np.asarray(phi, complex)),
                  t_blocks)                                  # T Phi T
    v = np.real(np.einsum("kbij,bji->k", r_set, y)) / dim
    eigs = np.linalg.eigvals(j)
    if np.max(np.abs(eigs)) >= 1.0:
        raise NumericalError("fixed point not contractive: spectral radius of J >= 1")
    return np.linalg.solve(np.eye(len(e)) - j, v), j, v


def t_prime(r_set, t_blocks, e, e_pr, phi, dim):
    """Resolvent-derivative equivalent T'(z, Phi) = T (Phi + correction) T.

    The correction is (1/dim) sum_k R_k e'_k / (1+e_k)^2; with e' = 0 this
    reduces to T Phi T.
    """
    weights = e_pr / (dim * (1.0 + e) ** 2)
    mid = np.asarray(phi, dtype=complex) + np.tensordot(weights, r_set, axes=(0, 0))
    return herm(np.einsum("bij,bjl,blp->bip", t_blocks, mid, t_blocks))


def t_prime_of(r_set, t_blocks, e, phi, dim):
    """Convenience: e' solve followed by the T' assembly for a given Phi."""
    e_pr, _, _ = e_prime(r_set, t_blocks, e, phi, dim)
    return t_prime(r_set, t_blocks, e, e_pr, phi, dim)


def ul_sinr_asymptotic(stats, service_map, powers, sigma2, num_antennas,
                       tol=1e-10, max_iters=500):
    """Uplink MMSE SINR deterministic equivalent, per UE.

    For each UE the restricted system over its serving APs is solved: the
    interfering estimate covariances (masked by the service map) weighted by
    the UE powers play the role of the column covariances, the effective
    noise covariance is the S term, and dim = |F_k| * N. The UE's own
    fixed-point coefficient is exactly its SINR approximation.

    Returns (sinr, states).
    """
    powers = np.asarray(powers, dtype=float)
    gamma_masked = stats.gamma * service_map.mask[:, :, None, None]
    sigma_blocks = effective_noise_blocks(stats, service_map, powers, sigma2)
    k = gamma_masked.shape[1]
    sinr = np.zeros(k)
    states = []
    for ue in range(k):
        aps = service_map.served_by[ue]
        if len(aps) == 0:
            states.append(None)
            continue
        dim = len(aps) * num_antennas
        r_set = np.swapaxes(gamma_masked[aps], 0, 1) * (dim * powers)[:, None, None, None]
        state, _ = fixed_point_e(r_set, sigma_blocks[aps], 0.0, dim,
                                 tol=tol, max_iters=max_iters)
        sinr[ue] = state.e[ue]
        states.append(state)
    return sinr, states


def dl_sinr_asymptotic(stats, service_map, powers, rho, sigma2, num_antennas,
                       tol=1e-10, max_iters=500):
    """Downlink RZF SINR deterministic equivalent, per UE.

    Builds the global resolvent equivalent at z = rho/(M N) from the masked
    estimate covariances (unit weights, as the RZF Gram carries no powers),
    then the normalization scalars delta_k via T'(z, chain^* chain), and the
    interference scalars theta[k, i] via T'(z, Gamma_i) with the three-term
    expansion (full covariance in the leading term, estimate covariance in
    the correction terms).

    Returns (sinr, DetEquivalents).
    """
    powers = np.asarray(powers, dtype=float)
    m, k = stats.gamma.shape[:2]
    dim = m * num_antennas
    z = rho / dim
    gamma_masked = np.swapaxes(stats.gamma * service_map.mask[:, :, None, None], 0, 1)  # (K,M,L,L)
    state, t_blocks = fixed_point_e(gamma_masked, 0, z, dim, tol=tol, max_iters=max_iters)
    mu = state.e
    delta = np.real(np.einsum("kbij,bji->k",
                              gamma_masked, t_prime_of(gamma_masked, t_blocks, mu, stats.ee, dim))) / dim**2

    rg_full = np.swapaxes(stats.rg, 0, 1)                # (K, M, L, L), unmasked
    t1 = np.empty((k, k))
    c = np.empty((k, k))
    ep_all, j_matrix, _ = e_prime(gamma_masked, t_blocks, mu, stats.ee, dim)
    for i in range(k):
        tp_i = t_prime_of(gamma_masked, t_blocks, mu, gamma_masked[i], dim)
        t1[:, i] = np.real(np.einsum("kbij,bji->k", rg_full, tp_i)) / dim**2
        c[:, i] = np.real(np.einsum("kbij,bji->k", gamma_masked, tp_i)) / dim
    one_mu = 1.0 + mu
    theta = t1 + (mu**2)[:, None] * c / (dim * one_mu**2)[:, None] \
        - 2.0 * mu[:, None] * c / (dim * one_mu)[:, None]

    tiny = np.finfo(float).tiny
    active = delta > 0
    dead = ~active & (mu <= 1e-30)
    if np.any(~active & ~dead):
        raise NumericalError(f"nonpositive delta for active UEs: delta={delta}, mu={mu}")
    inv_delta = np.where(active, 1.0 / np.where(active, delta, 1.0), 0.0)
    interf = (theta * inv_delta[None, :]) @ powers - np.diagonal(theta) * inv_delta * powers
    num = mu**2 * inv_delta * powers
    sinr = np.where(dead, 0.0, num / np.maximum(interf + sigma2, tiny))
    eq = DetEquivalents(z=z, e=state.e, mu=mu, delta=delta, theta=theta,
                        t_blocks=t_blocks, j_matrix=j_matrix, state=state)
    return sinr, eq
