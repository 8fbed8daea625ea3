"""Small dense semidefinite programs.

Standard primal/dual pair over a block-diagonal cone of real symmetric
matrices::

    min  <C, X>   s.t.  <A_i, X> = b_i,  X >= 0
    max  b^T y    s.t.  Z = C - sum_i y_i A_i >= 0

solved by an infeasible primal-dual path-following method (HKM search
direction, Mehrotra predictor-corrector).  Constraint rows are stored per
block as sparse row-major ``vec`` coefficients.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from gmeml.config import TOLERANCES


class SdpError(RuntimeError):
    pass


@dataclass
class SdpProblem:
    block_dims: list[int]
    C: list[np.ndarray]
    A: list[sp.csr_matrix]  # block b: shape (m, n_b * n_b)
    b: np.ndarray

    def __post_init__(self):
        if not (len(self.block_dims) == len(self.C) == len(self.A)):
            raise ValueError("block_dims, C and A must have one entry per block")
        m = len(self.b)
        for n, c, a in zip(self.block_dims, self.C, self.A):
            if c.shape != (n, n):
                raise ValueError(f"objective block has shape {c.shape}, expected {(n, n)}")
            if a.shape != (m, n * n):
                raise ValueError(f"constraint block has shape {a.shape}, expected {(m, n * n)}")

    @property
    def n_constraints(self) -> int:
        return len(self.b)

    def apply_A(self, X: list[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.n_constraints)
        for a, x in zip(self.A, X):
            out += a @ x.ravel()
        return out

    def apply_At(self, y: np.ndarray) -> list[np.ndarray]:
        out = []
        for n, a in zip(self.block_dims, self.A):
            v = (a.T @ y).reshape(n, n)
            out.append(0.5 * (v + v.T))
        return out

    def constraint_matrix(self) -> sp.csr_matrix:
        return sp.hstack(self.A, format="csr")


def sym_vec_rows(mats: list[np.ndarray]) -> sp.csr_matrix:
    """Stack symmetrized coefficient matrices as sparse vec rows."""
    rows = [0.5 * (m + m.T) for m in mats]
    return sp.csr_matrix(np.array([r.ravel() for r in rows]))


def presolve(problem: SdpProblem, threshold: float = 1e-10) -> tuple[SdpProblem, np.ndarray]:
    """Drop linearly dependent constraint rows (QR with column pivoting).

    Returns the reduced problem and the indices of the kept rows.  Raises if
    a dropped row is inconsistent with the kept ones.
    """
    a = problem.constraint_matrix().toarray()
    if a.shape[0] == 0:
        return problem, np.arange(0)
    _, r, piv = sla.qr(a.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    rank = int(np.sum(d > threshold * max(d[0], 1.0)))
    keep = np.sort(piv[:rank])
    reduced = SdpProblem(
        list(problem.block_dims),
        list(problem.C),
        [blk[keep] for blk in problem.A],
        problem.b[keep].copy(),
    )
    if rank < a.shape[0]:
        coef, *_ = np.linalg.lstsq(a[keep].T, a.T, rcond=None)
        if np.linalg.norm(coef.T @ problem.b[keep] - problem.b) > 1e-8 * (1 + np.linalg.norm(problem.b)):
            raise SdpError("redundant constraints are inconsistent")
    return reduced, keep


@dataclass
class SolverConfig:
    max_iters: int = 80
    gap_tol: float = 1e-9
    feas_tol: float = 1e-10
    step_fraction: float = 0.98
    init_scale: float = 1.0


@dataclass
class SdpSolution:
    X: list[np.ndarray]
    y: np.ndarray
    Z: list[np.ndarray]
    status: str  # optimal | max_iters | infeasible_numerics
    iterations: int
    primal_objective: float
    dual_objective: float
    duality_gap: float
    primal_infeasibility: float
    dual_infeasibility: float
    history: list = field(default_factory=list, repr=False)


class _Compiled:
    """Dense per-block constraint data restricted to the rows touching each block."""

    def __init__(self, p: SdpProblem):
        self.m = p.n_constraints
        self.dims = list(p.block_dims)
        self.rows = []
        self.coef = []
        for n, a in zip(p.block_dims, p.A):
            a = sp.csr_matrix(a)
            r = np.flatnonzero(np.diff(a.indptr))
            dense = a[r].toarray().reshape(len(r), n, n)
            self.rows.append(r)
            self.coef.append(0.5 * (dense + dense.transpose(0, 2, 1)))
        self.flat = [c.reshape(len(c), -1) for c in self.coef]
        # blocks of equal size are factorized together
        self.groups = {}
        for i, n in enumerate(self.dims):
            self.groups.setdefault(n, []).append(i)

    def apply_A(self, X) -> np.ndarray:
        out = np.zeros(self.m)
        for r, f, x in zip(self.rows, self.flat, X):
            if len(r):
                out[r] += f @ x.ravel()
        return out

    def apply_At(self, y) -> list[np.ndarray]:
        out = []
        for n, r, f in zip(self.dims, self.rows, self.flat):
            out.append((y[r] @ f).reshape(n, n) if len(r) else np.zeros((n, n)))
        return out

    def schur(self, X, Zinv) -> np.ndarray:
        """M_ij = <A_i, X A_j Z^{-1}> summed over blocks."""
        M = np.zeros((self.m, self.m))
        for r, c, f, x, zi in zip(self.rows, self.coef, self.flat, X, Zinv):
            if not len(r):
                continue
            t = np.matmul(np.matmul(x, c), zi).reshape(len(r), -1)
            M[np.ix_(r, r)] += f @ t.T
        return 0.5 * (M + M.T)

    def batched(self, mats, fn):
        """Apply a stacked numpy routine per size group, return per-block list."""
        out = [None] * len(mats)
        for idx in self.groups.values():
            res = fn(np.stack([mats[i] for i in idx]))
            for k, i in enumerate(idx):
                out[i] = res[k]
        return out


def _inner(U: list[np.ndarray], V: list[np.ndarray]) -> float:
    return float(sum(np.vdot(u, v).real for u, v in zip(U, V)))


def _inv_lower(L: np.ndarray) -> np.ndarray:
    n = L.shape[-1]
    return np.linalg.solve(L, np.broadcast_to(np.eye(n), L.shape))


def _max_steps(cp: _Compiled, Linv: list[np.ndarray], D: list[np.ndarray]) -> float:
    """Largest t <= 1 with L L^T + t D PSD for every block."""
    t = 1.0
    for idx in cp.groups.values():
        li = np.stack([Linv[i] for i in idx])
        d = np.stack([D[i] for i in idx])
        lam = np.linalg.eigvalsh(li @ d @ li.transpose(0, 2, 1))[:, 0]
        neg = lam < 0
        if np.any(neg):
            t = min(t, float(np.min(-1.0 / lam[neg])))
    return t


def _factor_schur(M: np.ndarray):
    """Cholesky of the Schur complement, with growing diagonal shifts if it is
    numerically indefinite near the optimum of a degenerate problem."""
    scale = np.max(np.abs(np.diag(M)))
    for shift in (0.0, 1e-14, 1e-12, 1e-10):
        try:
            return sla.cho_factor(M + shift * scale * np.eye(len(M)), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("Schur complement is not positive definite")


def _solve_schur(fac, M: np.ndarray, rhs: np.ndarray, refine: int = 1) -> np.ndarray:
    dy = sla.cho_solve(fac, rhs)
    for _ in range(refine):
        dy = dy + sla.cho_solve(fac, rhs - M @ dy)
    return dy


def _residuals(cp: _Compiled, p: SdpProblem, X, y, Z):
    rp = p.b - cp.apply_A(X)
    aty = cp.apply_At(y)
    Rd = [c - z - a for c, z, a in zip(p.C, Z, aty)]
    pobj = _inner(p.C, X)
    dobj = float(p.b @ y)
    bnorm = 1.0 + np.linalg.norm(p.b)
    cnorm = 1.0 + np.sqrt(sum(np.sum(c * c) for c in p.C))
    pinf = np.linalg.norm(rp) / bnorm
    dinf = np.sqrt(sum(np.sum(r * r) for r in Rd)) / cnorm
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return rp, Rd, pobj, dobj, pinf, dinf, gap


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def solve_sdp(problem: SdpProblem, cfg: SolverConfig | None = None) -> SdpSolution:
    cfg = SolverConfig() if cfg is None else cfg
    p = problem
    cp = _Compiled(p)
    n_total = sum(p.block_dims)
    X = [np.eye(n) * cfg.init_scale for n in p.block_dims]
    Z = [np.eye(n) * cfg.init_scale for n in p.block_dims]
    y = np.zeros(p.n_constraints)
    status = "max_iters"
    history = []
    it = 0
    for it in range(cfg.max_iters + 1):
        rp, Rd, pobj, dobj, pinf, dinf, gap = _residuals(cp, p, X, y, Z)
        history.append((pobj, dobj, pinf, dinf, gap))
        if pinf <= cfg.feas_tol and dinf <= cfg.feas_tol and gap <= cfg.gap_tol:
            status = "optimal"
            break
        if it == cfg.max_iters:
            break
        mu = _inner(X, Z) / n_total
        try:
            LX = cp.batched(X, np.linalg.cholesky)
            LZ = cp.batched(Z, np.linalg.cholesky)
        except np.linalg.LinAlgError:
            status = "infeasible_numerics"
            break
        LXi = cp.batched(LX, _inv_lower)
        LZi = cp.batched(LZ, _inv_lower)
        Zinv = [_sym(li.T @ li) for li in LZi]

        M = cp.schur(X, Zinv)
        try:
            Mfac = _factor_schur(M)
        except np.linalg.LinAlgError:
            status = "infeasible_numerics"
            break
        # A(X Rd Zinv) does not depend on the complementarity target
        base = cp.apply_A([x @ r @ zi for x, r, zi in zip(X, Rd, Zinv)])

        def direction(Rc):
            rhs = rp - cp.apply_A(Rc) + base
            dy = _solve_schur(Mfac, M, rhs)
            aty = cp.apply_At(dy)
            dZ = [r - a for r, a in zip(Rd, aty)]
            dX = [_sym(rc - x @ dz @ zi) for rc, x, dz, zi in zip(Rc, X, dZ, Zinv)]
            return dX, dy, dZ

        # predictor
        dXa, dya, dZa = direction([-x for x in X])
        ap = _max_steps(cp, LXi, dXa)
        ad = _max_steps(cp, LZi, dZa)
        mu_aff = _inner([x + ap * d for x, d in zip(X, dXa)], [z + ad * d for z, d in zip(Z, dZa)]) / n_total
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        # corrector
        Rc = [sigma * mu * zi - x - dxa @ dza @ zi for zi, x, dxa, dza in zip(Zinv, X, dXa, dZa)]
        dX, dy, dZ = direction(Rc)
        ap = min(1.0, cfg.step_fraction * _max_steps(cp, LXi, dX))
        ad = min(1.0, cfg.step_fraction * _max_steps(cp, LZi, dZ))
        X = [_sym(x + ap * d) for x, d in zip(X, dX)]
        y = y + ad * dy
        Z = [_sym(z + ad * d) for z, d in zip(Z, dZ)]

    rp, Rd, pobj, dobj, pinf, dinf, gap = _residuals(cp, p, X, y, Z)
    if status == "max_iters" and pinf <= TOLERANCES.sdp_feas and dinf <= TOLERANCES.sdp_feas and gap <= TOLERANCES.sdp_gap:
        status = "optimal"
    return SdpSolution(X, y, Z, status, it, pobj, dobj, gap, pinf, dinf, history)
