"""Per-AP analog beamformer design for hybrid transceivers.

The proposed design schedules correlation eigenmodes to RF chains by a
reverse-delete greedy that maximizes the minimum per-UE average signal power
subject to the per-AP chain budget, orthonormalizes the selected eigenvectors,
projects the result onto the phase-shifter constraint (every entry of modulus
1/sqrt(N)) by alternating minimization, and finally attaches a digital
orthogonality-compensation matrix so the cascaded analog chain is semi-unitary
again. An SVD baseline (top eigenvectors of the summed served-UE correlations)
and the trivial fully digital chain are provided for comparison.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .util import ConfigError, NumericalError, herm

_RANK_TOL = 1e-9


def schedule_eigenmodes(correlations, service_map, num_chains):
    """Max-min eigenmode scheduling by reverse delete.

    Starts with every eigenmode of every served UE tentatively selected and
    repeatedly deletes, among the modes of over-budget APs, the one whose
    removal keeps min_k S_k largest (ties: smallest eigenvalue, then lowest
    (ap, ue, mode) index), until each AP keeps at most `num_chains` modes.

    Returns (alpha, signal_power): alpha is the (M, K, N) boolean schedule,
    signal_power the resulting per-UE S_k = sum of scheduled eigenvalues over
    serving APs.
    """
    lam = correlations.eigvals
    m, k, n = lam.shape
    alpha = np.broadcast_to(service_map.mask[:, :, None], (m, k, n)).copy()
    s = np.einsum("mkn,mkn->k", alpha.astype(float), lam)
    counts = alpha.sum(axis=(1, 2))
    while True:
        over = counts > num_chains
        if not over.any():
            break
        cand = np.argwhere(alpha & over[:, None, None])      # lex-ordered (ap, ue, mode)
        vals = lam[cand[:, 0], cand[:, 1], cand[:, 2]]
        ue = cand[:, 1]
        order = np.argsort(s, kind="stable")
        low1, min1 = order[0], s[order[0]]
        min2 = s[order[1]] if k > 1 else np.inf
        others_min = np.where(ue == low1, min2, min1)        # min_{k' != k} S_k'
        objective = np.minimum(others_min, s[ue] - vals)
        pick = np.lexsort((np.arange(len(cand)), vals, -objective))[0]
        am, ak, an = cand[pick]
        alpha[am, ak, an] = False
        s[ak] -= vals[pick]
        counts[am] -= 1
    return alpha, s


def average_signal_power(analog, correlations, service_map):
    """Per-UE S_k = sum over serving APs of tr(W_m^* R_{m,k} W_m)."""
    quad = np.einsum("mni,mknp,mpj->mkij", np.conj(analog), correlations.R, analog)
    traces = np.real(np.trace(quad, axis1=-2, axis2=-1))
    return np.sum(traces * service_map.mask, axis=0)


def _orthonormal_basis(columns):
    """Orthonormal basis of span(columns) via pivoted QR; returns (Q, rank)."""
    if columns.shape[1] == 0:
        return columns.copy(), 0
    q, r, _ = scipy.linalg.qr(columns, mode="economic", pivoting=True)
    diag = np.abs(np.diagonal(r))
    rank = int(np.sum(diag > _RANK_TOL * max(diag[0], 1e-300)))
    return q[:, :rank], rank


def _extend_basis(q, pool, target):
    """Gram-Schmidt pool vectors onto q until it has `target` columns."""
    cols = [q[:, i] for i in range(q.shape[1])]
    for v in pool:
        if len(cols) == target:
            break
        r = v.astype(complex).copy()
        for b in cols:
            r -= b * (np.conj(b) @ r)
        nrm = np.linalg.norm(r)
        if nrm > 1e-8:
            cols.append(r / nrm)
    if len(cols) < target:
        raise NumericalError("could not assemble a full-rank analog basis")
    return np.stack(cols, axis=1)


def assemble_unconstrained(alpha, correlations, service_map, num_chains):
    """Per-AP orthonormal analog matrices spanning the scheduled eigenvectors.

    When an AP holds fewer than `num_chains` scheduled modes (or a degenerate
    selection loses rank), the remaining columns are filled with that AP's
    next-largest unscheduled eigenvectors, falling back to canonical basis
    vectors, so every W_m keeps full column rank.
    """
    lam, vec = correlations.eigvals, correlations.eigvecs
    m, k, n = lam.shape
    designs = np.empty((m, n, num_chains), dtype=complex)
    for ap in range(m):
        sel = np.argwhere(alpha[ap])                               # (ue, mode), lex order
        cols = vec[ap, sel[:, 0], :, sel[:, 1]].T if len(sel) else np.zeros((n, 0), complex)
        q, rank = _orthonormal_basis(cols)
        if rank < cols.shape[1]:
            warnings.warn(f"AP {ap}: scheduled eigenvectors are rank deficient "
                          f"({rank} < {cols.shape[1]}); padding replaces the deficient columns")
        spare = ~alpha[ap] & service_map.mask[ap][:, None]          # unscheduled modes of served UEs
        spare_idx = np.argwhere(spare)
        spare_order = np.lexsort((spare_idx[:, 1], spare_idx[:, 0],
                                  -lam[ap, spare_idx[:, 0], spare_idx[:, 1]])) if len(spare_idx) else []
        pool = [vec[ap, spare_idx[i, 0], :, spare_idx[i, 1]] for i in spare_order]
        pool.extend(np.eye(n)[:, j] for j in range(n))
        designs[ap] = _extend_basis(q, pool, num_chains)
    return designs


def constrain_phase_alternating(w_p, tol, max_iters=500):
    """Alternating minimization of ||W_hat - W_p A||_F^2 over the phase manifold.

    W_hat entries are constrained to modulus 1/sqrt(N); A is the unconstrained
    L x L mixing that lets W_hat track the column space of W_p. Each half-step
    solves its subproblem exactly (A = W_p^* W_hat given orthonormal W_p, and
    the elementwise phase projection for W_hat), so the recorded objective is
    non-increasing. Entries whose target is exactly zero keep their previous
    phase (phase 0 on the first pass).

    Returns (w_hat, a, objective_trace, iterations, converged).
    """
    n = w_p.shape[0]
    scale = 1.0 / np.sqrt(n)

    def phase_project(target, previous):
        mag = np.abs(target)
        out = np.where(mag > 0, target / np.where(mag > 0, mag, 1.0), previous / scale)
        return scale * out

    w_hat = phase_project(w_p, np.full_like(w_p, scale))
    a = np.conj(w_p.T) @ w_hat
    trace = [float(np.linalg.norm(w_hat - w_p @ a) ** 2)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        w_hat = phase_project(w_p @ a, w_hat)
        a = np.conj(w_p.T) @ w_hat
        trace.append(float(np.linalg.norm(w_hat - w_p @ a) ** 2))
        if trace[-2] - trace[-1] < tol * max(trace[-2], 1e-30):
            converged = True
            break
    return w_hat, a, np.asarray(trace), iterations, converged


def compensation_matrix(w_hat):
    """Digital compensation F = V D^{-1} V^* from the SVD W_hat = U D V^*.

    Makes the cascaded chain W_hat @ F semi-unitary (equal to U V^*). Raises
    when W_hat is rank deficient, in which case no compensation exists.
    """
    u, d, vh = np.linalg.svd(w_hat, full_matrices=False)
    if d[-1] <= 1e-10:
        raise NumericalError("compensation undefined: analog matrix is rank deficient")
    return herm((np.conj(vh.T) * (1.0 / d)) @ vh)


@dataclass(frozen=True)
class HybridDesign:
    """Frozen output of an analog design: all per-AP matrices, stacked on axis 0.

    `chain` is the cascaded analog+compensation matrix actually applied to the
    antennas (W_hat @ F for hybrid methods, identity for digital); effective
    channels are g = chain^* h.
    """

    method: str
    chain: np.ndarray                 # (M, N, L)
    projected: np.ndarray             # (M, N, L) orthonormal columns
    constrained: np.ndarray = None    # (M, N, L), |entries| = 1/sqrt(N)
    mixing: np.ndarray = None         # (M, L, L)
    compensation: np.ndarray = None   # (M, L, L) Hermitian PD
    alpha: np.ndarray = None          # (M, K, N) bool schedule (proposed method)
    signal_power: np.ndarray = None   # (K,) scheduler S_k (proposed method)
    am_iterations: np.ndarray = None
    am_converged: np.ndarray = None
    am_traces: tuple = None

    @property
    def num_aps(self):
        return self.chain.shape[0]

    @property
    def num_antennas(self):
        return self.chain.shape[1]

    @property
    def num_chains(self):
        return self.chain.shape[2]


def _constrain_all(projected, tol, max_iters):
    m, n, l = projected.shape
    w_hat = np.empty_like(projected)
    mixing = np.empty((m, l, l), dtype=complex)
    comp = np.empty((m, l, l), dtype=complex)
    chain = np.empty_like(projected)
    iters = np.empty(m, dtype=int)
    conv = np.empty(m, dtype=bool)
    traces = []
    for ap in range(m):
        w_hat[ap], mixing[ap], tr, iters[ap], conv[ap] = constrain_phase_alternating(
            projected[ap], tol, max_iters)
        comp[ap] = compensation_matrix(w_hat[ap])
        chain[ap] = w_hat[ap] @ comp[ap]
        traces.append(tr)
    return w_hat, mixing, comp, chain, iters, conv, tuple(traces)


def design_proposed(correlations, service_map, num_chains, tol, max_iters=500):
    """Eigenmode-scheduling analog design with phase constraint and compensation."""
    alpha, s = schedule_eigenmodes(correlations, service_map, num_chains)
    projected = assemble_unconstrained(alpha, correlations, service_map, num_chains)
    w_hat, mixing, comp, chain, iters, conv, traces = _constrain_all(projected, tol, max_iters)
    return HybridDesign(method="proposed", chain=chain, projected=projected, constrained=w_hat,
                        mixing=mixing, compensation=comp, alpha=alpha, signal_power=s,
                        am_iterations=iters, am_converged=conv, am_traces=traces)


def design_svd(correlations, service_map, num_chains, tol, max_iters=500):
    """Baseline: per AP, top eigenvectors of the sum of served-UE correlations."""
    m, k = correlations.shape
    n = correlations.num_antennas
    projected = np.empty((m, n, num_chains), dtype=complex)
    for ap in range(m):
        served = service_map.serves[ap]
        agg = correlations.R[ap, served].sum(axis=0) if len(served) else np.eye(n, dtype=complex)
        lam, vec = np.linalg.eigh(herm(agg))
        projected[ap] = vec[:, ::-1][:, :num_chains]
    w_hat, mixing, comp, chain, iters, conv, traces = _constrain_all(projected, tol, max_iters)
    return HybridDesign(method="svd", chain=chain, projected=projected, constrained=w_hat,
                        mixing=mixing, compensation=comp,
                        am_iterations=iters, am_converged=conv, am_traces=traces)


def design_digital(correlations):
    """Fully digital reference: identity chain with one RF chain per antenna."""
    m, _ = correlations.shape
    n = correlations.num_antennas
    eye = np.broadcast_to(np.eye(n, dtype=complex), (m, n, n)).copy()
    return HybridDesign(method="digital", chain=eye, projected=eye.copy())


def build_design(correlations, service_map, num_chains, method, tol, max_iters=500):
    """Dispatch on method name: proposed | svd | digital."""
    if method == "proposed":
        return design_proposed(correlations, service_map, num_chains, tol, max_iters)
    if method == "svd":
        return design_svd(correlations, service_map, num_chains, tol, max_iters)
    if method == "digital":
        return design_digital(correlations)
    raise ConfigError(f"unknown analog design method {method!r}")


def effective_correlations(correlations, design):
    """Correlations of the effective channels g = chain^* h.

    Returns (Rg, EE): Rg[m,k] = chain_m^* R[m,k] chain_m (L x L Hermitian PSD)
    and EE[m] = chain_m^* chain_m, the noise coloring of the analog chain.
    """
    chain = design.chain
    rg = herm(np.einsum("mni,mknp,mpj->mkij", np.conj(chain), correlations.R, chain))
    ee = herm(np.einsum("mni,mnj->mij", np.conj(chain), chain))
    return rg, ee


def apply_mixing(design, mixers):
    """Right-multiply each AP chain by an L x L mixer (for invariance checks)."""
    chain = np.einsum("mnl,mlj->mnj", design.chain, mixers)
    return HybridDesign(method=design.method + "+mixed", chain=chain, projected=design.projected)
