"""Pilot-phase simulation and MMSE estimation of the effective channels.

Each AP observes Y_m = sqrt(p_t) G_m Phi^T + chain^* Z_m during the pilot
phase and forms per-UE MMSE estimates from vec(Y_m) (column-major, matching
the phi_k kron I_L operator ordering). Two equivalent routes compute the
estimate covariance Gamma and error covariance C:

* the general route factorizes the full tau*L x tau*L observation covariance
  Psi_m per AP (Hermitian factorization, no explicit inverse), valid for any
  pilot matrix;
* the grouped route exploits orthogonal pilot sets, where Psi_m block-
  diagonalizes per pilot sequence, reducing everything to one L x L solve per
  (AP, pilot) pair. It is the fast path used inside pilot-assignment searches.

Both routes agree to machine precision on orthogonal books (tested).
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .util import ConfigError, herm


def orthogonal_pilot_set(tau):
    """tau orthogonal sequences: columns of the unitary DFT scaled by sqrt(tau)."""
    t = np.arange(tau)
    return np.exp(-2j * np.pi * np.outer(t, t) / tau)


@dataclass(frozen=True)
class PilotBook:
    """Assignment of each UE to one sequence of an orthogonal pilot set."""

    pilot_set: np.ndarray    # (tau, tau), columns with squared norm tau
    assignment: np.ndarray   # (K,) pilot index per UE

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=int)
        tau = self.pilot_set.shape[1]
        if a.ndim != 1 or np.any(a < 0) or np.any(a >= tau):
            raise ConfigError("pilot assignment out of range")
        object.__setattr__(self, "assignment", a)

    @property
    def tau(self):
        return self.pilot_set.shape[0]

    @property
    def phi(self):
        """Pilot matrix Phi = (phi_1, ..., phi_K), shape (tau, K)."""
        return self.pilot_set[:, self.assignment]

    def groups(self):
        """UE index arrays per pilot sequence."""
        return [np.flatnonzero(self.assignment == t) for t in range(self.tau)]


def make_pilot_book(tau, assignment):
    return PilotBook(pilot_set=orthogonal_pilot_set(tau), assignment=np.asarray(assignment, int))


def pilot_observations(g, book, pilot_power, chain, noise):
    """Per-AP pilot observations Y_m = sqrt(p_t) G_m Phi^T + chain_m^* Z_m.

    g has shape (..., M, K, L) (effective channels of the block), noise
    (..., M, N, tau) with per-entry variance sigma2; the result is
    (..., M, L, tau).
    """
    signal = np.sqrt(pilot_power) * np.einsum("...kl,tk->...lt", g, book.phi)
    return signal + np.einsum("mni,...mnt->...mit", np.conj(chain), noise)


@dataclass(frozen=True)
class EstimationStats:
    """Second-order statistics of the MMSE estimates for a fixed pilot book.

    gamma[m,k] is the covariance of the estimate g_hat_{m,k}, error_cov[m,k]
    the covariance of the estimation error (Rg - gamma), and est_op[m,k] the
    L x tau*L operator mapping vec(Y_m) to g_hat_{m,k}.
    """

    book: PilotBook
    pilot_power: float
    sigma2: float
    rg: np.ndarray          # (M, K, L, L)
    ee: np.ndarray          # (M, L, L) chain^* chain noise coloring
    gamma: np.ndarray       # (M, K, L, L)
    error_cov: np.ndarray   # (M, K, L, L)
    est_op: np.ndarray = None   # (M, K, L, tau*L)


def _phi_kron_eye(phi_k, l):
    return np.kron(phi_k[:, None], np.eye(l))


def estimation_statistics(rg, ee, book, pilot_power, sigma2, build_ops=True):
    """Exact MMSE statistics through the full per-AP observation covariance.

    Psi_m = p_t (Phi kron I_L) diag(Rg_m) (Phi kron I_L)^* + sigma2 I_tau kron EE_m
    is factorized once per AP; ill-conditioned Psi (condition number > 1e12)
    triggers a warning and a jittered factorization.
    """
    m, k, l, _ = rg.shape
    phi = book.phi
    tau = book.tau
    gamma = np.empty_like(rg)
    est_op = np.empty((m, k, l, tau * l), dtype=complex) if build_ops else None
    kron_ops = [_phi_kron_eye(phi[:, j], l) for j in range(k)]
    for ap in range(m):
        psi = pilot_power * np.einsum("tj,sj,jab->tasb", phi, np.conj(phi), rg[ap])
        psi = psi.reshape(tau * l, tau * l) + np.kron(np.eye(tau), sigma2 * ee[ap])
        psi = herm(psi)
        eigs = np.linalg.eigvalsh(psi)
        if eigs[0] <= 0 or eigs[-1] / eigs[0] > 1e12:
            warnings.warn(f"AP {ap}: ill-conditioned pilot observation covariance, "
                          "solving with diagonal regularization")
            psi = psi + (1e-12 * max(eigs[-1], 1e-300)) * np.eye(tau * l)
        factor = scipy.linalg.cho_factor(psi, check_finite=False)
        for j in range(k):
            x = scipy.linalg.cho_solve(factor, kron_ops[j], check_finite=False)  # Psi^{-1} (phi kron I)
            quad = kron_ops[j].conj().T @ x
            gamma[ap, j] = pilot_power * rg[ap, j] @ quad @ rg[ap, j]
            if build_ops:
                est_op[ap, j] = np.sqrt(pilot_power) * rg[ap, j] @ x.conj().T
    gamma = herm(gamma)
    return EstimationStats(book=book, pilot_power=pilot_power, sigma2=sigma2, rg=rg, ee=ee,
                           gamma=gamma, error_cov=rg - gamma, est_op=est_op)


def estimation_statistics_grouped(rg, ee, book, pilot_power, sigma2, build_ops=True):
    """Fast path for orthogonal pilot sets (per-pilot-group L x L solves)."""
    m, k, l, _ = rg.shape
    tau = book.tau
    ptau = pilot_power * tau
    groups = book.groups()
    q = np.empty((m, tau, l, l), dtype=complex)
    for t, members in enumerate(groups):
        a = ptau * rg[:, members].sum(axis=1) if len(members) else 0.0
        q[:, t] = np.linalg.inv(a + sigma2 * ee)
    qk = q[:, book.assignment]                                    # (M, K, L, L)
    gamma = herm(ptau * np.einsum("mkab,mkbc,mkcd->mkad", rg, qk, rg))
    est_op = None
    if build_ops:
        filt = np.sqrt(ptau) * np.einsum("mkab,mkbc->mkac", rg, qk)   # (M, K, L, L)
        units = np.conj(book.pilot_set[:, book.assignment]).T / np.sqrt(tau)   # (K, tau)
        est_op = np.einsum("kt,mkab->mkatb", units, filt).reshape(m, k, l, tau * l)
    return EstimationStats(book=book, pilot_power=pilot_power, sigma2=sigma2, rg=rg, ee=ee,
                           gamma=gamma, error_cov=rg - gamma, est_op=est_op)


def solo_estimate_covariances(rg, ee, tau, pilot_power, sigma2):
    """Contamination-free Gamma per pair, as if each UE had a private pilot."""
    ptau = pilot_power * tau
    q = np.linalg.inv(ptau * rg + sigma2 * ee[:, None])
    return herm(ptau * np.einsum("mkab,mkbc,mkcd->mkad", rg, q, rg))


def mmse_estimate(y, stats):
    """MMSE estimates g_hat[..., m, k, :] from observations y[..., m, :, :].

    vec(Y_m) is taken column-major, consistent with the estimator operator.
    """
    if stats.est_op is None:
        raise ConfigError("estimation statistics were built without estimator operators")
    vec = np.swapaxes(y, -1, -2).reshape(y.shape[:-2] + (-1,))
    return np.einsum("mkaq,...mq->...mka", stats.est_op, vec)
