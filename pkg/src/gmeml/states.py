"""Three-qubit states: generators, fiducials, Bloch features and bipartite measures.

Density matrices are plain 8x8 complex arrays in the computational basis
with qubit order A, B, C (A most significant).
"""

from dataclasses import dataclass
from enum import Enum
from itertools import product as _iproduct

import numpy as np

from gmeml import numerics
from gmeml.config import TOLERANCES

DIM = 8
N_FEATURES = 64

I2 = np.eye(2, dtype=np.complex128)
SX = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SY = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SZ = np.array([[1, 0], [0, -1]], dtype=np.complex128)
PAULIS = (I2, SX, SY, SZ)


class InvalidStateError(ValueError):
    pass


class Bipartition(Enum):
    """Single-qubit cut; the value is the index of the isolated party."""

    A_BC = 0
    B_AC = 1
    C_AB = 2

    @property
    def label(self) -> str:
        return ("A|BC", "B|AC", "C|AB")[self.value]


BIPARTITIONS = tuple(Bipartition)


def _pauli_word_indices() -> list[tuple[int, int, int]]:
    r = range(1, 4)
    words = [(0, 0, 0)]
    words += [(i, 0, 0) for i in r]
    words += [(0, j, 0) for j in r]
    words += [(0, 0, k) for k in r]
    words += [(i, j, 0) for i in r for j in r]
    words += [(i, 0, k) for i in r for k in r]
    words += [(0, j, k) for j in r for k in r]
    words += [(i, j, k) for i in r for j in r for k in r]
    return words


PAULI_WORDS = tuple(_pauli_word_indices())
_PAULI_BASIS = np.array(
    [np.kron(np.kron(PAULIS[i], PAULIS[j]), PAULIS[k]) for i, j, k in PAULI_WORDS]
)
_TRIU = np.triu_indices(DIM, k=1)


def pauli_basis() -> np.ndarray:
    """The 64 ordered Pauli words as a (64, 8, 8) array."""
    return _PAULI_BASIS.copy()


def validate_density(rho, tol: float | None = None) -> np.ndarray:
    """Check Hermiticity, unit trace and positivity; return the symmetrized matrix."""
    tol = TOLERANCES.density if tol is None else tol
    try:
        m = numerics.as_matrix(rho)
    except ValueError as exc:
        raise InvalidStateError(str(exc)) from exc
    if m.shape != (DIM, DIM):
        raise InvalidStateError(f"expected an 8x8 density matrix, got {m.shape}")
    if np.linalg.norm(m - m.conj().T) > tol:
        raise InvalidStateError("density matrix is not Hermitian")
    m = 0.5 * (m + m.conj().T)
    tr = np.trace(m).real
    if abs(tr - 1.0) > tol:
        raise InvalidStateError(f"trace {tr!r} differs from 1")
    lam = np.linalg.eigvalsh(m)[0]
    if lam < -tol:
        raise InvalidStateError(f"negative eigenvalue {lam:.3e}")
    return m


def bloch_features(rho, layout: str = "pauli") -> np.ndarray:
    """64 real features of a density matrix.

    ``layout="pauli"``: coefficients Tr(rho B_k) over the ordered Pauli words
    [III, r, s, p, t, q, o, m]; entry 0 is always 1.
    ``layout="triangle"``: 8 diagonal entries followed by (Re, Im) of the 28
    strictly upper-triangular entries, row-major.
    """
    m = validate_density(rho)
    v = features_batch(m[None], layout)[0]
    if layout == "pauli":
        v[0] = 1.0  # Tr(rho) of a validated state, exact by definition
    return v


def features_batch(rhos: np.ndarray, layout: str = "pauli") -> np.ndarray:
    """Vectorized :func:`bloch_features` over an (n, 8, 8) stack (no validation)."""
    rhos = np.asarray(rhos, dtype=np.complex128)
    if layout == "pauli":
        # Tr(rho B) = sum_ij rho_ij B_ji
        return np.einsum("kji,nij->nk", _PAULI_BASIS, rhos).real
    if layout == "triangle":
        diag = np.einsum("nii->ni", rhos).real
        upper = rhos[:, _TRIU[0], _TRIU[1]]
        pairs = np.stack([upper.real, upper.imag], axis=-1).reshape(len(rhos), -1)
        return np.concatenate([diag, pairs], axis=1)
    raise ValueError(f"unknown feature layout {layout!r}")


def density_from_features(v, layout: str = "pauli") -> np.ndarray:
    """Rebuild the matrix from features without the physicality check."""
    v = np.asarray(v, dtype=float)
    if v.shape != (N_FEATURES,):
        raise ValueError(f"expected 64 features, got shape {v.shape}")
    if layout == "pauli":
        return np.tensordot(v, _PAULI_BASIS, axes=1) / DIM
    if layout == "triangle":
        m = np.zeros((DIM, DIM), dtype=np.complex128)
        m[np.diag_indices(DIM)] = v[:DIM]
        pairs = v[DIM:].reshape(-1, 2)
        m[_TRIU] = pairs[:, 0] + 1j * pairs[:, 1]
        m[_TRIU[1], _TRIU[0]] = pairs[:, 0] - 1j * pairs[:, 1]
        return m
    raise ValueError(f"unknown feature layout {layout!r}")


def from_bloch(v, layout: str = "pauli", tol: float | None = None) -> np.ndarray:
    """Inverse of :func:`bloch_features`; raises if the result is not a state."""
    tol = TOLERANCES.density if tol is None else tol
    v = np.asarray(v, dtype=float)
    if layout == "pauli" and abs(v[0] - 1.0) > tol:
        raise InvalidStateError("identity coefficient must be 1")
    return validate_density(density_from_features(v, layout), tol)


def permute_qubits(rho: np.ndarray, order) -> np.ndarray:
    """Reorder the tensor factors: output factor i is input factor order[i]."""
    t = np.asarray(rho).reshape((2,) * 6)
    order = list(order)
    return t.transpose(order + [o + 3 for o in order]).reshape(DIM, DIM)


def partial_transpose(rho, alpha: Bipartition) -> np.ndarray:
    """Transpose the indices of the isolated party of ``alpha``.

    Works on any 8x8 matrix; the GMN constraints apply it to witness blocks too.
    """
    m = np.asarray(rho)
    axis = Bipartition(alpha).value
    t = m.reshape((2,) * 6)
    return np.swapaxes(t, axis, axis + 3).reshape(DIM, DIM)


def negativity(rho, alpha: Bipartition) -> float:
    m = validate_density(rho)
    return 0.5 * (numerics.trace_norm(partial_transpose(m, alpha)) - 1.0)


def pure_gmn_oracle(psi) -> float:
    """min over the three cuts of the negativity of a pure state."""
    psi = np.asarray(psi, dtype=np.complex128).reshape(-1)
    if psi.shape != (DIM,):
        raise ValueError(f"expected 8 amplitudes, got {psi.shape}")
    if abs(np.linalg.norm(psi) - 1.0) > TOLERANCES.density:
        raise InvalidStateError("state vector is not normalized")
    rho = np.outer(psi, psi.conj())
    return min(negativity(rho, a) for a in BIPARTITIONS)


def trace_distance(rho, sigma) -> float:
    a = validate_density(rho)
    b = validate_density(sigma)
    return 0.5 * numerics.trace_norm(a - b)


def mean_trace_distances(rhos: np.ndarray, chunk: int = 32) -> np.ndarray:
    """For each state, the mean trace distance to every other state in the stack."""
    rhos = np.asarray(rhos, dtype=np.complex128)
    n = len(rhos)
    if n < 2:
        return np.zeros(n)
    totals = np.zeros(n)
    for start in range(0, n, chunk):
        block = rhos[start : start + chunk]
        diff = block[:, None, :, :] - rhos[None, :, :, :]
        d = 0.5 * np.abs(np.linalg.eigvalsh(diff)).sum(axis=-1)
        totals[start : start + chunk] = d.sum(axis=1)
    return totals / (n - 1)


# -- fiducial states --------------------------------------------------------

def ket(bits: str) -> np.ndarray:
    v = np.zeros(DIM, dtype=np.complex128)
    v[int(bits, 2)] = 1.0
    return v


def projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.complex128)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


GHZ_KET = (ket("000") + ket("111")) / np.sqrt(2)
W_KET = (ket("001") + ket("010") + ket("100")) / np.sqrt(3)


def fiducial(name: str) -> np.ndarray:
    if name == "ghz":
        return projector(GHZ_KET)
    if name == "w":
        return projector(W_KET)
    if name == "product_000":
        return projector(ket("000"))
    if name == "max_mixed":
        return np.eye(DIM, dtype=np.complex128) / DIM
    raise ValueError(f"unknown fiducial state {name!r}")


# -- random states ----------------------------------------------------------

GENERATOR_KINDS = ("ginibre", "pure_random", "biseparable_mix", "ghz_noise", "product")


@dataclass(frozen=True)
class GeneratorSpec:
    """Which random ensemble to draw from.

    ``rank=None`` for ginibre draws the rank uniformly from 1..8 and
    ``p=None`` for ghz_noise draws the mixing weight uniformly from [0, 1].
    """

    kind: str = "ginibre"
    rank: int | None = None
    components: int | None = None
    p: float | None = None
    local_unitary: bool = False

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator {self.kind!r}")
        if self.rank is not None and not 1 <= self.rank <= DIM:
            raise ValueError(f"ginibre rank must lie in 1..8, got {self.rank}")
        if self.components is not None and self.components < 1:
            raise ValueError("biseparable_mix needs at least one component")
        if self.p is not None and not 0.0 <= self.p <= 1.0:
            raise ValueError(f"ghz_noise weight must lie in [0, 1], got {self.p}")


def ginibre_density(rng: np.random.Generator, dim: int, rank: int) -> np.ndarray:
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    m = g @ g.conj().T
    return m / np.trace(m).real


def haar_unitary(rng: np.random.Generator, dim: int) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_local_unitary(rng: np.random.Generator) -> np.ndarray:
    return np.kron(np.kron(haar_unitary(rng, 2), haar_unitary(rng, 2)), haar_unitary(rng, 2))


def _biseparable_component(rng: np.random.Generator) -> np.ndarray:
    party = int(rng.integers(3))
    single = ginibre_density(rng, 2, int(rng.integers(1, 3)))
    rest = ginibre_density(rng, 4, int(rng.integers(1, 5)))
    rho = np.kron(single, rest)
    # rho is ordered (party, others...); undo that ordering
    others = [q for q in range(3) if q != party]
    order = [party] + others
    inverse = [order.index(q) for q in range(3)]
    return permute_qubits(rho, inverse)


def random_density(rng: np.random.Generator, spec: GeneratorSpec | None = None) -> np.ndarray:
    spec = GeneratorSpec() if spec is None else spec
    kind = spec.kind
    if kind == "ginibre":
        rank = spec.rank if spec.rank is not None else int(rng.integers(1, DIM + 1))
        rho = ginibre_density(rng, DIM, rank)
    elif kind == "pure_random":
        rho = ginibre_density(rng, DIM, 1)
    elif kind == "biseparable_mix":
        j = spec.components if spec.components is not None else int(rng.integers(1, 5))
        weights = rng.dirichlet(np.ones(j))
        rho = sum(w * _biseparable_component(rng) for w in weights)
    elif kind == "ghz_noise":
        p = spec.p if spec.p is not None else float(rng.uniform())
        rho = p * fiducial("ghz") + (1.0 - p) * fiducial("max_mixed")
        if spec.local_unitary:
            u = random_local_unitary(rng)
            rho = u @ rho @ u.conj().T
    else:  # product
        rho = np.kron(
            np.kron(ginibre_density(rng, 2, int(rng.integers(1, 3))), ginibre_density(rng, 2, int(rng.integers(1, 3)))),
            ginibre_density(rng, 2, int(rng.integers(1, 3))),
        )
    return 0.5 * (rho + rho.conj().T)
