"""Soft-margin kernel SVM trained with SMO.

The dual

    max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
    s.t. sum_i a_i y_i = 0,  0 <= a_i <= C_i

is solved by sequential minimal optimization with second-order working-set
selection.  Kernel rows are computed on demand and kept in an LRU cache, so
memory stays bounded for a few thousand samples.  Per-sample upper bounds
``C_i`` let the semi-supervised code weight labeled and unlabeled points
differently.

The decision function is ``f(x) = sum_i a_i y_i K(x_i, x) + b`` and
``predict`` maps ``f >= 0`` to +1.
"""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from gmeml import _accel
from gmeml._accel import njit
from gmeml.config import TOLERANCES

SCHEMA_VERSION = 1
KERNELS = ("rbf", "linear")
DEFAULT_C_GRID = tuple(10.0 ** np.linspace(-2, 3, 11))
DEFAULT_GAMMA_GRID = tuple(10.0 ** np.linspace(-4, 2, 13))
# interpretation of the reported best cell: C = 3.5, log10(gamma) = -1.8
REFERENCE_C = 3.5
REFERENCE_GAMMA = 10.0**-1.8


class SvmError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    meta: tuple = ()

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.asarray(self.y)
        if X.ndim != 2:
            raise SvmError(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise SvmError(f"{len(y)} labels for {X.shape[0]} samples")
        if not np.all(np.isfinite(X)):
            raise SvmError("features contain non-finite values")
        if not np.all(np.isin(y, (-1, 1))):
            raise SvmError("labels must be +1 or -1")
        if self.meta and len(self.meta) != len(y):
            raise SvmError("meta must have one entry per sample")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int64))
        object.__setattr__(self, "meta", tuple(self.meta))

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        meta = tuple(self.meta[i] for i in idx) if self.meta else ()
        return Dataset(self.X[idx], self.y[idx], meta)


@dataclass(frozen=True)
class TrainConfig:
    C_grid: tuple = DEFAULT_C_GRID
    gamma_grid: tuple = DEFAULT_GAMMA_GRID
    folds: int = 5
    tol: float = TOLERANCES.smo_tol
    max_passes: int = 2000
    cache_mb: float = 256.0
    kernel: str = "rbf"
    jobs: int = 1

    def __post_init__(self):
        if not self.C_grid or not self.gamma_grid:
            raise SvmError("hyperparameter grids must be non-empty")
        if self.folds < 2:
            raise SvmError("need at least two folds")
        if self.kernel not in KERNELS:
            raise SvmError(f"unknown kernel {self.kernel!r}")
        if min(self.C_grid) <= 0 or min(self.gamma_grid) <= 0:
            raise SvmError("C and gamma must be positive")


@dataclass(frozen=True)
class SvmModel:
    support: np.ndarray  # indices into the training set
    support_vectors: np.ndarray  # masked features of the support vectors
    dual_coef: np.ndarray  # a_i * y_i
    b: float
    gamma: float
    C: float
    feature_mask: np.ndarray
    kernel: str = "rbf"
    converged: bool = True
    iterations: int = 0

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.feature_mask):
            raise SvmError(f"expected {len(self.feature_mask)} features, got {X.shape[1]}")
        Xm = X[:, self.feature_mask]
        if len(self.dual_coef) == 0:
            return np.full(len(X), self.b)
        K = kernel_matrix(Xm, self.support_vectors, self.gamma, self.kernel)
        return K @ self.dual_coef + self.b

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0.0, 1, -1)

    def w_norm_sq(self) -> float:
        """||w||^2 in feature space, for converting f into a geometric distance."""
        K = kernel_matrix(self.support_vectors, self.support_vectors, self.gamma, self.kernel)
        return float(self.dual_coef @ K @ self.dual_coef)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kernel": self.kernel,
            "C": self.C,
            "gamma": self.gamma,
            "b": self.b,
            "feature_mask": [bool(v) for v in self.feature_mask],
            "support": [int(i) for i in self.support],
            "dual_coef": [float(v) for v in self.dual_coef],
            "support_vectors": self.support_vectors.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SvmModel:
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SvmError(f"model schema version {d.get('schema_version')} != {SCHEMA_VERSION}")
        mask = np.array(d["feature_mask"], dtype=bool)
        sv = np.array(d["support_vectors"], dtype=np.float64).reshape(-1, int(mask.sum()))
        return cls(
            support=np.array(d["support"], dtype=np.int64),
            support_vectors=sv,
            dual_coef=np.array(d["dual_coef"], dtype=np.float64),
            b=float(d["b"]),
            gamma=float(d["gamma"]),
            C=float(d["C"]),
            feature_mask=mask,
            kernel=d["kernel"],
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, s: str) -> SvmModel:
        return cls.from_dict(json.loads(s))


# -- kernels -----------------------------------------------------------------


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise SvmError(f"feature length mismatch: {x.shape} vs {y.shape}")
    if gamma <= 0:
        raise SvmError("gamma must be positive")
    d = x - y
    return float(np.exp(-gamma * (d @ d)))


def sq_distances(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    d2 = np.sum(X * X, axis=1)[:, None] + np.sum(Y * Y, axis=1)[None, :] - 2.0 * (X @ Y.T)
    return np.maximum(d2, 0.0)


def kernel_matrix(X, Y, gamma: float, kernel: str = "rbf") -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if kernel == "linear":
        return X @ Y.T
    if gamma <= 0:
        raise SvmError("gamma must be positive")
    return np.exp(-gamma * sq_distances(X, Y))


# -- SMO ---------------------------------------------------------------------

_TAU = 1e-12


@njit
def _kernel_row_nb(X, sq, i, gamma, linear, out):
    n, d = X.shape
    for j in range(n):
        s = 0.0
        for k in range(d):
            s += X[i, k] * X[j, k]
        if linear:
            out[j] = s
        else:
            v = sq[i] + sq[j] - 2.0 * s
            if v < 0.0:
                v = 0.0
            out[j] = np.exp(-gamma * v)


@njit
def _smo_nb(X, y, Cvec, gamma, linear, tol, max_iter, cache, slot_of, owner):
    # a full precomputed kernel is passed as cache with slot_of = owner = arange(n)
    n = X.shape[0]
    slots = cache.shape[0]
    sq = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(X.shape[1]):
            s += X[i, k] * X[i, k]
        sq[i] = s
    diag = np.empty(n)
    for i in range(n):
        diag[i] = 1.0 if not linear else sq[i]
    stamp = np.zeros(slots, np.int64)
    clock = 0
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    converged = False
    while it < max_iter:
        # working set: i by maximal violation, j by second-order gain
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] == 1 and alpha[t] < Cvec[t]) or (y[t] == -1 and alpha[t] > 0.0):
                v = -y[t] * G[t]
                if v > gmax:
                    gmax = v
                    i = t
        if i < 0:
            converged = True
            break
        # fetch row i
        clock += 1
        si = slot_of[i]
        if si < 0:
            si = 0
            for s in range(slots):
                if owner[s] < 0:
                    si = s
                    break
                if stamp[s] < stamp[si]:
                    si = s
            if owner[si] >= 0:
                slot_of[owner[si]] = -1
            owner[si] = i
            slot_of[i] = si
            _kernel_row_nb(X, sq, i, gamma, linear, cache[si])
        stamp[si] = clock
        gmin = np.inf
        j = -1
        best = np.inf
        for t in range(n):
            if (y[t] == 1 and alpha[t] > 0.0) or (y[t] == -1 and alpha[t] < Cvec[t]):
                v = -y[t] * G[t]
                if v < gmin:
                    gmin = v
                bgain = gmax - v
                if bgain > 0.0:
                    a = diag[i] + diag[t] - 2.0 * cache[si, t]
                    if a <= 0.0:
                        a = _TAU
                    obj = -(bgain * bgain) / a
                    if obj < best:
                        best = obj
                        j = t
        if gmax - gmin < tol or j < 0:
            converged = True
            break
        clock += 1
        sj = slot_of[j]
        if sj < 0:
            sj = 0
            for s in range(slots):
                if owner[s] < 0:
                    sj = s
                    break
                if stamp[s] < stamp[sj] and s != si:
                    sj = s
            if sj == si:
                sj = (si + 1) % slots
            if owner[sj] >= 0:
                slot_of[owner[sj]] = -1
            owner[sj] = j
            slot_of[j] = sj
            _kernel_row_nb(X, sq, j, gamma, linear, cache[sj])
        stamp[sj] = clock
        Kij = cache[si, j]
        Ci = Cvec[i]
        Cj = Cvec[j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        a = diag[i] + diag[j] - 2.0 * Kij
        if a <= 0.0:
            a = _TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / a
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0.0:
                if alpha[j] < 0.0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0.0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > Ci - Cj:
                if alpha[i] > Ci:
                    alpha[i] = Ci
                    alpha[j] = Ci - diff
            else:
                if alpha[j] > Cj:
                    alpha[j] = Cj
                    alpha[i] = Cj + diff
        else:
            delta = (G[i] - G[j]) / a
            ssum = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if ssum > Ci:
                if alpha[i] > Ci:
                    alpha[i] = Ci
                    alpha[j] = ssum - Ci
            else:
                if alpha[j] < 0.0:
                    alpha[j] = 0.0
                    alpha[i] = ssum
            if ssum > Cj:
                if alpha[j] > Cj:
                    alpha[j] = Cj
                    alpha[i] = ssum - Cj
            else:
                if alpha[i] < 0.0:
                    alpha[i] = 0.0
                    alpha[j] = ssum
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        for t in range(n):
            G[t] += y[t] * (y[i] * dai * cache[si, t] + y[j] * daj * cache[sj, t])
        it += 1
    return alpha, G, it, converged


def _kernel_row_np(X, sq, i, gamma, linear):
    s = X @ X[i]
    if linear:
        return s
    return np.exp(-gamma * np.maximum(sq[i] + sq - 2.0 * s, 0.0))


def _smo_np(X, y, Cvec, gamma, linear, tol, max_iter, slots, K=None):
    """Vectorized reference implementation of :func:`_smo_nb` (same iterates)."""
    n = X.shape[0]
    yf = y.astype(np.float64)
    sq = np.einsum("ij,ij->i", X, X)
    diag = sq.copy() if linear else np.ones(n)
    cache: dict[int, np.ndarray] = {}
    order: list[int] = []

    def row(k):
        if K is not None:
            return K[k]
        if k in cache:
            order.remove(k)
        else:
            if len(cache) >= slots:
                del cache[order.pop(0)]
            cache[k] = _kernel_row_np(X, sq, k, gamma, linear)
        order.append(k)
        return cache[k]

    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    converged = False
    while it < max_iter:
        r = -yf * G
        up = ((y == 1) & (alpha < Cvec)) | ((y == -1) & (alpha > 0.0))
        low = ((y == 1) & (alpha > 0.0)) | ((y == -1) & (alpha < Cvec))
        if not up.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, r, -np.inf)))
        gmax = r[i]
        Ki = row(i)
        gmin = np.min(r[low]) if low.any() else np.inf
        bgain = gmax - r
        cand = low & (bgain > 0.0)
        if gmax - gmin < tol or not cand.any():
            converged = True
            break
        a = diag[i] + diag - 2.0 * Ki
        a = np.where(a <= 0.0, _TAU, a)
        obj = np.where(cand, -(bgain * bgain) / a, np.inf)
        j = int(np.argmin(obj))
        Kj = row(j)
        Ci, Cj = Cvec[i], Cvec[j]
        ai_old, aj_old = alpha[i], alpha[j]
        aa = diag[i] + diag[j] - 2.0 * Ki[j]
        if aa <= 0.0:
            aa = _TAU
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / aa
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0.0:
                if aj < 0.0:
                    aj, ai = 0.0, diff
            elif ai < 0.0:
                ai, aj = 0.0, -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai, aj = Ci, Ci - diff
            elif aj > Cj:
                aj, ai = Cj, Cj + diff
        else:
            delta = (G[i] - G[j]) / aa
            ssum = ai + aj
            ai -= delta
            aj += delta
            if ssum > Ci:
                if ai > Ci:
                    ai, aj = Ci, ssum - Ci
            elif aj < 0.0:
                aj, ai = 0.0, ssum
            if ssum > Cj:
                if aj > Cj:
                    aj, ai = Cj, ssum - Cj
            elif ai < 0.0:
                ai, aj = 0.0, ssum
        alpha[i], alpha[j] = ai, aj
        G += yf * (yf[i] * (ai - ai_old) * Ki + yf[j] * (aj - aj_old) * Kj)
        it += 1
    return alpha, G, it, converged


def _bias(alpha, G, y, Cvec) -> float:
    r = -y * G
    free = (alpha > 0.0) & (alpha < Cvec)
    if free.any():
        return float(np.mean(r[free]))
    at_zero = alpha <= 0.0
    # alpha = 0 needs y(b - r) >= 0, alpha = C needs y(b - r) <= 0
    lower = ((y == 1) & at_zero) | ((y == -1) & ~at_zero)
    upper = ~lower
    lb = np.max(r[lower]) if lower.any() else -np.inf
    ub = np.min(r[upper]) if upper.any() else np.inf
    if not np.isfinite(lb):
        return float(ub)
    if not np.isfinite(ub):
        return float(lb)
    return 0.5 * float(lb + ub)


@dataclass
class SmoResult:
    alpha: np.ndarray
    b: float
    gradient: np.ndarray
    iterations: int
    converged: bool


def smo(X, y, C, gamma: float, tol: float | None = None, kernel: str = "rbf", max_passes: int = 2000, cache_mb: float = 256.0, K=None) -> SmoResult:
    """Solve the SVM dual.  ``C`` is a scalar or one bound per sample.

    ``K`` optionally supplies the full kernel matrix of ``X``, which callers
    refitting the same points with different labels reuse.
    """
    tol = TOLERANCES.smo_tol if tol is None else tol
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    Cvec = np.broadcast_to(np.asarray(C, dtype=np.float64), (n,)).copy()
    if np.any(Cvec <= 0):
        raise SvmError("C must be positive")
    slots = int(max(2, min(n, cache_mb * 2**20 // (8 * max(n, 1)))))
    max_iter = max(100_000, max_passes * n)
    linear = kernel == "linear"
    if K is not None:
        K = np.ascontiguousarray(K, dtype=np.float64)
        if K.shape != (n, n):
            raise SvmError(f"kernel matrix has shape {K.shape}, expected {(n, n)}")
    if _accel.USE_NUMBA:
        if K is None:
            cache = np.empty((slots, n))
            slot_of = np.full(n, -1, np.int64)
            owner = np.full(slots, -1, np.int64)
        else:
            cache, slot_of, owner = K, np.arange(n), np.arange(n)
        alpha, G, it, conv = _smo_nb(X, y, Cvec, float(gamma), linear, float(tol), int(max_iter), cache, slot_of, owner)
    else:
        alpha, G, it, conv = _smo_np(X, y, Cvec, float(gamma), linear, float(tol), int(max_iter), slots, K)
    yf = y.astype(np.float64)
    # clip round-off at the box
    alpha = np.clip(alpha, 0.0, Cvec)
    return SmoResult(alpha, _bias(alpha, G, yf, Cvec), G, int(it), bool(conv))


def train(data: Dataset, C, gamma: float, tol: float | None = None, *, feature_mask=None, kernel: str = "rbf", max_passes: int = 2000, cache_mb: float = 256.0) -> SvmModel:
    if len(np.unique(data.y)) < 2:
        raise SvmError("training data must contain both classes")
    if gamma <= 0 and kernel == "rbf":
        raise SvmError("gamma must be positive")
    mask = np.ones(data.n_features, dtype=bool) if feature_mask is None else np.asarray(feature_mask, dtype=bool)
    if mask.shape != (data.n_features,):
        raise SvmError("feature mask length does not match the data")
    Xm = np.ascontiguousarray(data.X[:, mask])
    res = smo(Xm, data.y, C, gamma, tol, kernel, max_passes, cache_mb)
    sv = np.flatnonzero(res.alpha > 0.0)
    Cscalar = float(np.max(C)) if np.ndim(C) else float(C)
    return SvmModel(
        support=sv,
        support_vectors=Xm[sv].copy(),
        dual_coef=res.alpha[sv] * data.y[sv],
        b=res.b,
        gamma=float(gamma),
        C=Cscalar,
        feature_mask=mask,
        kernel=kernel,
        converged=res.converged,
        iterations=res.iterations,
    )


def decision_value(model: SvmModel, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    f = model.decision_function(x)
    return float(f[0]) if x.ndim == 1 else f


def dual_objective(alpha, X, y, gamma: float, kernel: str = "rbf") -> float:
    K = kernel_matrix(X, X, gamma, kernel)
    ay = np.asarray(alpha) * np.asarray(y)
    return float(np.sum(alpha) - 0.5 * ay @ K @ ay)


@dataclass
class KktReport:
    passed: bool
    max_violation: float
    equality_residual: float
    n_violations: int


def kkt_audit(model: SvmModel, data: Dataset, tol: float | None = None, C=None) -> KktReport:
    """Check the dual optimality conditions of ``model`` on its training data."""
    tol = TOLERANCES.smo_tol if tol is None else tol
    n = len(data)
    Cvec = np.broadcast_to(np.asarray(model.C if C is None else C, dtype=np.float64), (n,))
    alpha = np.zeros(n)
    alpha[model.support] = np.abs(model.dual_coef)
    yf = model.decision_function(data.X) * data.y
    eps = 1e-12 * np.maximum(1.0, Cvec)
    at_zero = alpha <= eps
    at_c = alpha >= Cvec - eps
    free = ~at_zero & ~at_c
    viol = np.zeros(n)
    viol[at_zero] = np.maximum(0.0, (1.0 - tol) - yf[at_zero]) + 0.0
    viol[at_c] = np.maximum(0.0, yf[at_c] - (1.0 + tol))
    viol[free] = np.maximum(0.0, np.abs(yf[free] - 1.0) - tol)
    eq = abs(float(alpha @ data.y))
    bad = int(np.sum(viol > 0.0))
    mv = float(np.max(viol)) if n else 0.0
    return KktReport(bad == 0 and eq <= 1e-8 * max(1.0, float(np.max(Cvec))), mv, eq, bad)


def exhaustive_dual(X, y, C: float, gamma: float, kernel: str = "rbf") -> tuple[float, np.ndarray]:
    """Exact dual optimum for tiny problems by enumerating active sets.

    Each multiplier is fixed at 0, fixed at C, or free; the free ones solve
    the equality-constrained stationarity system.  The best feasible point
    over all 3^n patterns is the optimum.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n > 10:
        raise SvmError("exhaustive search is limited to 10 points")
    Q = (y[:, None] * y[None, :]) * kernel_matrix(X, X, gamma, kernel)
    best, best_a = -np.inf, None
    for pattern in itertools.product((0, 1, 2), repeat=n):
        p = np.array(pattern)
        a = np.where(p == 1, C, 0.0).astype(np.float64)
        F = np.flatnonzero(p == 2)
        B = np.flatnonzero(p != 2)
        if len(F):
            k = len(F)
            lhs = np.zeros((k + 1, k + 1))
            lhs[:k, :k] = Q[np.ix_(F, F)]
            lhs[:k, k] = y[F]
            lhs[k, :k] = y[F]
            rhs = np.concatenate([1.0 - Q[np.ix_(F, B)] @ a[B], [-(y[B] @ a[B])]])
            sol = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
            a[F] = sol[:k]
        if np.any(a < -1e-12) or np.any(a > C + 1e-12) or abs(a @ y) > 1e-9:
            continue
        a = np.clip(a, 0.0, C)
        val = float(np.sum(a) - 0.5 * a @ Q @ a)
        if val > best:
            best, best_a = val, a
    return best, best_a


# -- model selection ---------------------------------------------------------


def stratified_folds(y, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    y = np.asarray(y)
    folds = [[] for _ in range(k)]
    for cls in (1, -1):
        idx = np.flatnonzero(y == cls)
        if len(idx) < k:
            raise SvmError(f"class {cls:+d} has {len(idx)} samples, fewer than {k} folds")
        idx = idx[rng.permutation(len(idx))]
        for f, part in enumerate(np.array_split(idx, k)):
            folds[f].extend(part.tolist())
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def _fold_accuracy(args):
    X, y, train_idx, test_idx, C, gamma, tol, kernel, mask, max_passes = args
    data = Dataset(X[train_idx], y[train_idx])
    m = train(data, C, gamma, tol, feature_mask=mask, kernel=kernel, max_passes=max_passes)
    return float(np.mean(m.predict(X[test_idx]) == y[test_idx]))


def _run(tasks, jobs: int):
    if jobs <= 1 or len(tasks) < 2:
        return [_fold_accuracy(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_fold_accuracy, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def cv_accuracy(data: Dataset, C: float, gamma: float, folds: list[np.ndarray], cfg: TrainConfig, mask=None) -> float:
    tasks = []
    all_idx = np.arange(len(data))
    for test in folds:
        tr = np.setdiff1d(all_idx, test)
        tasks.append((data.X, data.y, tr, test, C, gamma, cfg.tol, cfg.kernel, mask, cfg.max_passes))
    return float(np.mean(_run(tasks, cfg.jobs)))


@dataclass
class CvResult:
    C: float
    gamma: float
    accuracy: float
    table: np.ndarray  # accuracy[len(C_grid), len(gamma_grid)]
    C_grid: tuple = ()
    gamma_grid: tuple = ()


def cross_validate(data: Dataset, cfg: TrainConfig, rng: np.random.Generator, mask=None) -> CvResult:
    """Grid search over (C, gamma) by stratified k-fold accuracy.

    Ties go to the first cell in row-major grid order.
    """
    folds = stratified_folds(data.y, cfg.folds, rng)
    cells = [(c, g) for c in cfg.C_grid for g in cfg.gamma_grid]
    all_idx = np.arange(len(data))
    tasks = []
    for c, g in cells:
        for test in folds:
            tasks.append((data.X, data.y, np.setdiff1d(all_idx, test), test, c, g, cfg.tol, cfg.kernel, mask, cfg.max_passes))
    acc = np.array(_run(tasks, cfg.jobs)).reshape(len(cells), len(folds)).mean(axis=1)
    table = acc.reshape(len(cfg.C_grid), len(cfg.gamma_grid))
    k = int(np.argmax(acc))
    return CvResult(float(cells[k][0]), float(cells[k][1]), float(acc[k]), table, tuple(cfg.C_grid), tuple(cfg.gamma_grid))


@dataclass
class ScreeningResult:
    mask: np.ndarray
    accuracy_before: float
    accuracy_after: float
    dropped: list[int] = field(default_factory=list)
    gains: np.ndarray | None = None  # single-drop gains from the first traversal


def screen_features(data: Dataset, cfg: TrainConfig, C: float, gamma: float, rng: np.random.Generator, min_gain: float = 0.001, max_rounds: int = 10) -> ScreeningResult:
    """Traversal screening of feature dimensions.

    Each round evaluates the cv accuracy with every remaining feature left
    out in turn.  Features whose removal gains at least ``min_gain`` are then
    tried in order of decreasing gain, each re-evaluated against the current
    mask before it is accepted.  Rounds repeat until nothing is dropped.
    """
    folds = stratified_folds(data.y, cfg.folds, rng)
    mask = np.ones(data.n_features, dtype=bool)
    base = cv_accuracy(data, C, gamma, folds, cfg, mask)
    before = base
    dropped: list[int] = []
    first_gains = None
    for _ in range(max_rounds):
        active = np.flatnonzero(mask)
        if len(active) <= 1:
            break
        gains = np.full(data.n_features, -np.inf)
        for d in active:
            trial = mask.copy()
            trial[d] = False
            gains[d] = cv_accuracy(data, C, gamma, folds, cfg, trial) - base
        if first_gains is None:
            first_gains = gains.copy()
        accepted = False
        for d in np.argsort(-gains, kind="stable"):
            if gains[d] < min_gain or mask.sum() <= 1:
                break
            trial = mask.copy()
            trial[d] = False
            acc = cv_accuracy(data, C, gamma, folds, cfg, trial) if accepted else base + gains[d]
            if acc - base >= min_gain:
                mask, base = trial, acc
                dropped.append(int(d))
                accepted = True
        if not accepted:
            break
    return ScreeningResult(mask, before, base, dropped, first_gains)


@dataclass
class FeatureCurve:
    counts: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    order: np.ndarray  # features in removal order


def accuracy_vs_feature_count(train_data: Dataset, test_data: Dataset, order, C: float, gamma: float, seeds, counts=None, cfg: TrainConfig | None = None, subsample: int | None = None) -> FeatureCurve:
    """Test accuracy as features are removed along ``order``.

    For each seed the training set is a (balanced) random subsample of
    ``train_data`` when ``subsample`` is given, otherwise the full set, so
    identical seeds give zero spread.
    """
    cfg = TrainConfig() if cfg is None else cfg
    seeds = list(seeds)
    if len(seeds) < 2:
        raise SvmError("need at least two repetitions")
    order = np.asarray(order, dtype=np.int64)
    n_feat = train_data.n_features
    counts = np.arange(n_feat, n_feat - len(order) - 1, -1) if counts is None else np.asarray(counts)
    acc = np.zeros((len(seeds), len(counts)))
    for s, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        tr = train_data
        if subsample is not None and subsample < len(train_data):
            idx = np.sort(rng.choice(len(train_data), subsample, replace=False))
            tr = train_data.subset(idx)
        for c, count in enumerate(counts):
            mask = np.ones(n_feat, dtype=bool)
            mask[order[: n_feat - int(count)]] = False
            m = train(tr, C, gamma, cfg.tol, feature_mask=mask, kernel=cfg.kernel, max_passes=cfg.max_passes)
            acc[s, c] = np.mean(m.predict(test_data.X) == test_data.y)
    return FeatureCurve(np.asarray(counts), acc.mean(axis=0), acc.std(axis=0), order)
