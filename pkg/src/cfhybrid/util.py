"""Shared numerical helpers: seeded RNG derivation, complex Gaussians, Hermitian ops."""

import numpy as np


class ConfigError(ValueError):
    """Invalid scenario/configuration input (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """Numerical failure such as a non-convergent fixed point (CLI exit code 3)."""


def derive_rng(seed, *path):
    """Derive an independent Generator from a root seed and an integer path.

    Streams derived with different paths do not overlap, so Monte Carlo
    blocks/drops can be generated in any order or in parallel while staying
    bit-reproducible.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path)))


def crandn(rng, *shape):
    """Standard circularly-symmetric complex Gaussian, unit variance per entry."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def herm(a):
    """Hermitian part of the last two axes, (A + A^H)/2."""
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def hermitian_defect(a):
    """Frobenius norm of the anti-Hermitian part (0 for exactly Hermitian input)."""
    return np.linalg.norm(a - np.conj(np.swapaxes(a, -1, -2)))


def btrace(a, b=None):
    """Trace over the last two axes; with b given, trace of a @ b."""
    if b is None:
        return np.trace(a, axis1=-2, axis2=-1)
    return np.einsum("...ab,...ba->...", a, b)


def random_psd(rng, n, rank=None):
    """Random Hermitian PSD matrix with unit-order spectral norm."""
    r = rank if rank is not None else n
    x = crandn(rng, n, r)
    return herm(x @ x.conj().T / r)


def random_semiunitary(rng, n, l):
    """Random n x l matrix with orthonormal columns (Haar by QR)."""
    q, r = np.linalg.qr(crandn(rng, n, l))
    return q * np.sign(np.real(np.diagonal(r)) + 1e-300)


def fmt(x):
    """Canonical full-precision text form of a float (byte-stable CSV output)."""
    return format(float(x), ".17g")
