"""Renormalized genuine multipartite negativity of three-qubit states.

The witness program::

    N_g(rho) = -min Tr(W rho)
    s.t.  W = P_a + Q_a^{T_a},  P_a >= 0,  0 <= Q_a <= 1   for a in {A, B, C}

is written with W eliminated through the A branch, upper bounds on Q_a
encoded by slack blocks S_a = 1 - Q_a >= 0, and every Hermitian block
embedded as a real symmetric block of twice the size.

For rank-deficient rho the infimum over witnesses is not attained (W can
grow without bound on the kernel of rho), which breaks interior-point
methods.  The P_a blocks are therefore restricted to the range of rho, where
both the witness problem and its dual are strictly feasible, and a
full-space witness is rebuilt afterwards.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from gmeml import numerics
from gmeml.config import TOLERANCES
from gmeml.sdp import SdpProblem, SdpSolution, SolverConfig, solve_sdp
from gmeml.states import BIPARTITIONS, DIM, Bipartition, negativity, partial_transpose, validate_density

BLOCK_NAMES = tuple(f"{kind}_{a.name[0]}" for a in BIPARTITIONS for kind in ("P", "Q", "S"))
RDIM = 2 * DIM
# eigenvalues of rho below this are treated as exact zeros (range restriction)
RANK_TOL = 1e-14
# shift added to the range part of W when lifting a rank-deficient solution
LIFT_SHIFT = 1e-7


class GmnSolverError(RuntimeError):
    pass


@dataclass
class WitnessCertificate:
    W: np.ndarray
    P: dict
    Q: dict
    objective: float


@dataclass
class GmnResult:
    value: float
    certificate: WitnessCertificate
    duality_gap: float
    status: str
    iterations: int
    primal_objective: float
    dual_objective: float
    primal_infeasibility: float
    dual_infeasibility: float
    rank: int = DIM


@dataclass
class GmnSdp:
    """The SDP for one state plus what is needed to rebuild the witness."""

    problem: SdpProblem
    rho: np.ndarray
    range_basis: np.ndarray  # 8 x r, eigenvectors of rho with nonzero eigenvalue
    kernel_basis: np.ndarray  # 8 x (8 - r)

    @property
    def rank(self) -> int:
        return self.range_basis.shape[1]


def _block_index(kind: str, alpha: Bipartition) -> int:
    return 3 * alpha.value + "PQS".index(kind)


@lru_cache(maxsize=None)
def _basis(n: int) -> np.ndarray:
    return numerics.hermitian_basis(n)


def _partial_transpose_batch(m: np.ndarray, alpha: Bipartition) -> np.ndarray:
    axis = alpha.value + 1
    t = m.reshape((m.shape[0],) + (2,) * 6)
    return np.swapaxes(t, axis, axis + 3).reshape(m.shape)


def build_gmn_sdp(rho) -> GmnSdp:
    """Witness SDP for ``rho`` in standard form.

    Blocks, per cut a in (A, B, C): P_a, Q_a, S_a.  P_a lives on the range of
    rho (for full-rank states this is the whole space and every block is
    16x16 after realification).  Rows: Q_a + S_a = 1 for each cut (64 each),
    then the two couplings P_A + Q_A^{T_A} = P_b + Q_b^{T_b} for b = B, C
    compressed to the range (r^2 each).
    """
    rho = validate_density(rho)
    lam, U = np.linalg.eigh(rho)
    keep = lam > RANK_TOL
    V, K = U[:, keep], U[:, ~keep]
    r = V.shape[1]
    D = np.diag(lam[keep]).astype(np.complex128)

    full = _basis(DIM)
    red = _basis(r)
    lifted = np.einsum("ij,kjl,ml->kim", V, red, V.conj())  # V B V^dagger
    lifted_pt = {a: _partial_transpose_batch(lifted, a) for a in BIPARTITIONS}

    n_cap = len(full)
    n_cpl = len(red)
    m = 3 * n_cap + 2 * n_cpl
    dims = []
    blocks = []
    for a in BIPARTITIONS:
        cap_rows = slice(a.value * n_cap, (a.value + 1) * n_cap)
        # P_a
        pr = np.zeros((m, 2 * r, 2 * r))
        if a is Bipartition.A_BC:
            pr[3 * n_cap :] = np.concatenate([0.5 * numerics.realify_batch(red)] * 2)
        else:
            j = 0 if a is Bipartition.B_AC else 1
            start = 3 * n_cap + j * n_cpl
            pr[start : start + n_cpl] = -0.5 * numerics.realify_batch(red)
        # Q_a
        qr = np.zeros((m, RDIM, RDIM))
        qr[cap_rows] = 0.5 * numerics.realify_batch(full)
        if a is Bipartition.A_BC:
            qr[3 * n_cap :] = np.concatenate([0.5 * numerics.realify_batch(lifted_pt[a])] * 2)
        else:
            j = 0 if a is Bipartition.B_AC else 1
            start = 3 * n_cap + j * n_cpl
            qr[start : start + n_cpl] = -0.5 * numerics.realify_batch(lifted_pt[a])
        # S_a
        sr = np.zeros((m, RDIM, RDIM))
        sr[cap_rows] = 0.5 * numerics.realify_batch(full)
        for dim, rows in ((2 * r, pr), (RDIM, qr), (RDIM, sr)):
            dims.append(dim)
            blocks.append(sp.csr_matrix(rows.reshape(m, -1)))

    b = np.zeros(m)
    b[: 3 * n_cap] = np.tile(np.trace(full, axis1=1, axis2=2).real, 3)

    rho_r = V @ D @ V.conj().T
    C = [np.zeros((d, d)) for d in dims]
    C[_block_index("P", Bipartition.A_BC)] = 0.5 * numerics.realify_unchecked(D)
    C[_block_index("Q", Bipartition.A_BC)] = 0.5 * numerics.realify(partial_transpose(rho_r, Bipartition.A_BC))
    return GmnSdp(SdpProblem(dims, C, blocks, b), rho, V, K)


def _hermitian(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def certificate_from_solution(gsdp: GmnSdp, sol: SdpSolution, shift: float = LIFT_SHIFT) -> WitnessCertificate:
    """Rebuild a full-space witness W = P_a + Q_a^{T_a} from the solver blocks.

    For rank-deficient states the range part of W is shifted by ``shift`` so
    that every compressed P_a is positive definite; the kernel part is then
    the smallest multiple of the identity keeping every P_a PSD.  rho does
    not see the kernel part, so the objective moves by at most ``shift``.
    """
    V, Kb, rho = gsdp.range_basis, gsdp.kernel_basis, gsdp.rho
    Q = {a: _hermitian(numerics.derealify(sol.X[_block_index("Q", a)])) for a in BIPARTITIONS}
    qt = {a: partial_transpose(Q[a], a) for a in BIPARTITIONS}
    Pa = _hermitian(numerics.derealify(sol.X[_block_index("P", Bipartition.A_BC)]))
    Wr = _hermitian(Pa + V.conj().T @ qt[Bipartition.A_BC] @ V)
    if Kb.shape[1] == 0:
        W = _hermitian(V @ Wr @ V.conj().T)
    else:
        r = V.shape[1]
        compressed = {a: _hermitian(Wr - V.conj().T @ qt[a] @ V) for a in BIPARTITIONS}
        worst = min(np.linalg.eigvalsh(c)[0] for c in compressed.values())
        delta = max(shift, shift - 2.0 * worst)
        kern = 0.0
        for a in BIPARTITIONS:
            pr = compressed[a] + delta * np.eye(r)
            cross = Kb.conj().T @ qt[a] @ V
            need = Kb.conj().T @ qt[a] @ Kb + cross @ np.linalg.solve(pr, cross.conj().T)
            kern = max(kern, np.linalg.eigvalsh(_hermitian(need))[-1])
        kern += delta
        W = _hermitian(V @ (Wr + delta * np.eye(r)) @ V.conj().T + kern * (Kb @ Kb.conj().T))
    P = {a: _hermitian(W - qt[a]) for a in BIPARTITIONS}
    objective = float(np.trace(W @ rho).real)
    return WitnessCertificate(W, P, Q, objective)


def verify_certificate(cert: WitnessCertificate, rho, tol: float | None = None) -> bool:
    """Solver-independent audit of a witness certificate."""
    tol = TOLERANCES.certificate if tol is None else tol
    try:
        rho = validate_density(rho)
        W = np.asarray(cert.W)
        if np.linalg.norm(W - W.conj().T) > tol:
            return False
        for a in BIPARTITIONS:
            P, Q = np.asarray(cert.P[a]), np.asarray(cert.Q[a])
            if np.linalg.norm(P - P.conj().T) > tol or np.linalg.norm(Q - Q.conj().T) > tol:
                return False
            if np.linalg.eigvalsh(_hermitian(P))[0] < -tol:
                return False
            lam = np.linalg.eigvalsh(_hermitian(Q))
            if lam[0] < -tol or lam[-1] > 1.0 + tol:
                return False
            if np.linalg.norm(W - (P + partial_transpose(Q, a))) > tol:
                return False
        return abs(float(np.trace(W @ rho).real) - cert.objective) <= tol
    except (KeyError, ValueError, np.linalg.LinAlgError):
        return False


def renormalized_gmn(rho, cfg: SolverConfig | None = None) -> GmnResult:
    rho = validate_density(rho)
    gsdp = build_gmn_sdp(rho)
    sol = solve_sdp(gsdp.problem, cfg)
    cert = certificate_from_solution(gsdp, sol)
    # witness objective vs the solver's dual bound
    gap = abs(cert.objective - sol.dual_objective) / (1.0 + abs(cert.objective) + abs(sol.dual_objective))
    status = sol.status
    if status == "optimal" and gap > TOLERANCES.sdp_gap:
        status = "max_iters"
    return GmnResult(
        value=max(0.0, -cert.objective),
        certificate=cert,
        duality_gap=gap,
        status=status,
        iterations=sol.iterations,
        primal_objective=sol.primal_objective,
        dual_objective=sol.dual_objective,
        primal_infeasibility=sol.primal_infeasibility,
        dual_infeasibility=sol.dual_infeasibility,
        rank=gsdp.rank,
    )


def min_negativity(rho) -> float:
    """Upper bound on N_g from the trivial decomposition."""
    return min(negativity(rho, a) for a in BIPARTITIONS)


def label_state(rho, threshold: float | None = None, cfg: SolverConfig | None = None) -> tuple[int, GmnResult]:
    """-1 for genuinely multipartite entangled (N_g above threshold), +1 otherwise.

    Raises GmnSolverError rather than guessing when the solve did not converge.
    """
    threshold = TOLERANCES.label_threshold if threshold is None else threshold
    res = renormalized_gmn(rho, cfg)
    if res.status != "optimal":
        raise GmnSolverError(
            f"GMN solve ended with status {res.status} after {res.iterations} iterations "
            f"(gap {res.duality_gap:.2e}, pinf {res.primal_infeasibility:.2e}, dinf {res.dual_infeasibility:.2e})"
        )
    return (-1 if res.value > threshold else 1), res
