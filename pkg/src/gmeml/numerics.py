"""Dense linear-algebra helpers for small Hermitian matrices.

Everything here works on plain numpy arrays.  Matrices are at most 64x64
(the real embedding of an 8x8 density matrix is 16x16), so dense LAPACK
routines are used throughout.
"""

from typing import NamedTuple

import numpy as np

from gmeml.config import TOLERANCES


class NotHermitianError(ValueError):
    pass


class HermitianEig(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def as_matrix(a) -> np.ndarray:
    """Validate a finite 2-D array and return it as complex128."""
    m = np.asarray(a)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m.astype(np.complex128, copy=False)


def hermitize(h, tol: float | None = None) -> np.ndarray:
    """Return (H + H^dagger)/2, refusing inputs that are not Hermitian within ``tol``.

    The residual is measured relative to max(1, ||H||_F) so that round-off on
    large entries is absorbed but genuine asymmetry is not.
    """
    tol = TOLERANCES.hermitian if tol is None else tol
    m = as_matrix(h)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got {m.shape}")
    resid = np.linalg.norm(m - m.conj().T)
    if resid > tol * max(1.0, np.linalg.norm(m)):
        raise NotHermitianError(f"Hermiticity residual {resid:.3e} exceeds {tol:.1e}")
    return 0.5 * (m + m.conj().T)


def hermitian_eig(h) -> HermitianEig:
    """Eigendecomposition with ascending real eigenvalues and unitary eigenvectors."""
    m = hermitize(h)
    w, v = np.linalg.eigh(m)
    return HermitianEig(w, v)


def eigvalsh(h) -> np.ndarray:
    return np.linalg.eigvalsh(hermitize(h))


def trace_norm(h) -> float:
    """Sum of absolute eigenvalues of a Hermitian matrix."""
    return float(np.sum(np.abs(eigvalsh(h))))


def kron(a, b, max_dim: int | None = None) -> np.ndarray:
    max_dim = TOLERANCES.max_kron_dim if max_dim is None else max_dim
    a = as_matrix(a)
    b = as_matrix(b)
    rows, cols = a.shape[0] * b.shape[0], a.shape[1] * b.shape[1]
    if max(rows, cols) > max_dim:
        raise ValueError(f"kron result {rows}x{cols} exceeds cap {max_dim}")
    return np.kron(a, b)


def kron_all(*mats) -> np.ndarray:
    out = np.eye(1, dtype=np.complex128)
    for m in mats:
        out = kron(out, m)
    return out


def is_psd(h, tol: float = 0.0) -> bool:
    return bool(eigvalsh(h)[0] >= -tol)


def realify(h) -> np.ndarray:
    """Real symmetric embedding [[Re H, -Im H], [Im H, Re H]] of a Hermitian matrix."""
    m = hermitize(h)
    return realify_unchecked(m)


def realify_unchecked(m: np.ndarray) -> np.ndarray:
    """Real embedding of an arbitrary complex matrix (no Hermiticity check)."""
    re, im = m.real, m.imag
    return np.block([[re, -im], [im, re]])


def derealify(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`realify` for matrices with the embedding's block structure.

    Off-structure components (round-off of an otherwise structured iterate)
    are averaged away.
    """
    n = r.shape[0] // 2
    re = 0.5 * (r[:n, :n] + r[n:, n:])
    im = 0.5 * (r[n:, :n] - r[:n, n:])
    return re + 1j * im


def hermitian_basis(n: int) -> np.ndarray:
    """Orthonormal real basis of n x n Hermitian matrices, shape (n*n, n, n).

    Diagonal units first, then (E_jk + E_kj)/sqrt2 and i(E_jk - E_kj)/sqrt2
    for j < k in row-major order.
    """
    basis = np.zeros((n * n, n, n), dtype=np.complex128)
    idx = 0
    for j in range(n):
        basis[idx, j, j] = 1.0
        idx += 1
    s = 1.0 / np.sqrt(2.0)
    for j in range(n):
        for k in range(j + 1, n):
            basis[idx, j, k] = basis[idx, k, j] = s
            basis[idx + 1, j, k] = 1j * s
            basis[idx + 1, k, j] = -1j * s
            idx += 2
    return basis


def realify_batch(m: np.ndarray) -> np.ndarray:
    """:func:`realify_unchecked` over a stack of matrices."""
    re, im = m.real, m.imag
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bottom], axis=-2)
