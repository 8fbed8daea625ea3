"""Safe semi-supervised SVM and grouped iterative prediction.

Candidate low-density separators come from simulated annealing over the
labels of the unlabeled points.  Each annealing round proposes label flips
(and balance-preserving pair swaps) against the current model and then
retrains.  Candidates that overlap too much with a better one are discarded.
``safe_assign`` picks the labeling that does best, relative to the
supervised baseline, in the worst case over the surviving candidates.

The grouping protocols split the unlabeled set into ``m`` groups and predict
them one after another, each time adding the previous predictions to the
training set.  ``renewal_plan`` orders groups from the outside in by
decision value so the most confident points are predicted first.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from gmeml import svm
from gmeml.states import mean_trace_distances


# largest training set whose kernel matrix is precomputed (~200 MB)
KERNEL_PRECOMPUTE_LIMIT = 5000


class S4vmError(ValueError):
    pass


@dataclass(frozen=True)
class S4vmConfig:
    T: int = 10
    C1: float = 100.0
    C2: float = 0.1
    gamma: float = svm.REFERENCE_GAMMA
    diversity: float = 0.5  # overlap threshold is 1 - diversity
    G: float = 1e6
    balance: tuple | None = None  # None: labeled positive fraction +- balance_width
    balance_width: float = 0.1
    restarts: int = 20
    anneal_rounds: int = 10
    cooling: float = 0.95
    uphill_accept: float = 0.5
    pad_attempts: int = 4
    tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.T < 2:
            raise S4vmError("T must be at least 2")
        if self.C1 <= 0 or self.C2 <= 0 or self.gamma <= 0:
            raise S4vmError("C1, C2 and gamma must be positive")
        if not 0.0 < self.diversity < 1.0:
            raise S4vmError("diversity threshold must lie in (0, 1)")
        if self.G <= self.C1:
            raise S4vmError("diversity penalty G must exceed C1")
        if self.balance is not None:
            lo, hi = self.balance
            if not 0.0 < lo <= hi < 1.0:
                raise S4vmError("balance band must be a sub-interval of (0, 1)")
        if self.restarts < 1 or self.anneal_rounds < 1:
            raise S4vmError("need at least one restart and one annealing round")
        if not 0.0 < self.cooling < 1.0:
            raise S4vmError("cooling factor must lie in (0, 1)")


@dataclass
class CandidateSeparator:
    labels: np.ndarray
    model: svm.SvmModel
    objective: float
    f_unlabeled: np.ndarray


@dataclass
class CandidateSet:
    candidates: list
    padded: bool = False  # fewer than two survived the overlap filter
    attempts: int = 0


@dataclass
class SafeAssignment:
    labels: np.ndarray
    value: float  # achieved min_t [agree(y, y_t) - agree(y_svm, y_t)]
    relaxed_value: float
    slack: float


@dataclass
class S4vmPrediction:
    labels: np.ndarray
    f: np.ndarray
    baseline: np.ndarray
    safe: SafeAssignment
    candidates: CandidateSet


@dataclass
class GroupingPlan:
    groups: list
    strategy: str  # renewal | random | none

    def validate(self, u: int) -> None:
        allidx = np.concatenate(self.groups) if self.groups else np.array([], dtype=np.int64)
        if len(allidx) != u or not np.array_equal(np.sort(allidx), np.arange(u)):
            raise S4vmError("groups must partition the unlabeled indices")


@dataclass
class SemisupRun:
    protocol: str
    plan: GroupingPlan
    group_labels: list = field(default_factory=list)
    group_accuracy: list = field(default_factory=list)
    group_f: list = field(default_factory=list)
    mean_accuracy: float = float("nan")
    train_sizes: list = field(default_factory=list)
    complete: bool = True
    error: str = ""


# -- objective and fitting ---------------------------------------------------


def _hinge(z):
    return np.maximum(0.0, 1.0 - z)


@dataclass
class _Fit:
    model: svm.SvmModel
    f: np.ndarray  # in-sample decision values
    w2: float


def _fit(X, y, Cvec, gamma, tol, K=None) -> _Fit:
    res = svm.smo(X, y, Cvec, gamma, tol, K=K)
    yf = y.astype(np.float64)
    f = yf * (res.gradient + 1.0) + res.b
    w2 = float(res.alpha @ (res.gradient + 1.0))
    sv = np.flatnonzero(res.alpha > 0.0)
    model = svm.SvmModel(
        support=sv,
        support_vectors=X[sv].copy(),
        dual_coef=res.alpha[sv] * y[sv],
        b=res.b,
        gamma=float(gamma),
        C=float(np.max(Cvec)),
        feature_mask=np.ones(X.shape[1], dtype=bool),
        converged=res.converged,
        iterations=res.iterations,
    )
    return _Fit(model, f, w2)


def s3vm_objective(labeled: svm.Dataset, X_unlabeled, y_hat, model: svm.SvmModel, C1: float, C2: float) -> float:
    """1/2 ||w||^2 + C1 sum hinge(labeled) + C2 sum hinge(unlabeled vs y_hat)."""
    X_unlabeled = np.atleast_2d(np.asarray(X_unlabeled, dtype=np.float64)).reshape(-1, labeled.n_features)
    y_hat = np.asarray(y_hat)
    if len(y_hat) != len(X_unlabeled) or not np.all(np.isin(y_hat, (-1, 1))):
        raise S4vmError("y_hat must assign +-1 to every unlabeled sample")
    val = 0.5 * model.w_norm_sq() + C1 * float(np.sum(_hinge(labeled.y * model.decision_function(labeled.X))))
    if len(y_hat):
        val += C2 * float(np.sum(_hinge(y_hat * model.decision_function(X_unlabeled))))
    return val


def _band(labeled_y, cfg: S4vmConfig) -> tuple[float, float]:
    if cfg.balance is not None:
        return cfg.balance
    p = float(np.mean(labeled_y == 1))
    return max(0.0, p - cfg.balance_width), min(1.0, p + cfg.balance_width)


def _count_band(u: int, band) -> tuple[int, int]:
    lo = int(np.ceil(band[0] * u - 1e-9))
    hi = int(np.floor(band[1] * u + 1e-9))
    if lo > hi:  # band narrower than one sample
        lo = hi = int(round(0.5 * (band[0] + band[1]) * u))
    return lo, hi


def _project_balance(labels, score, lo: int, hi: int) -> np.ndarray:
    """Flip the least confident labels until the positive count is in [lo, hi]."""
    labels = labels.copy()
    npos = int(np.sum(labels == 1))
    if npos > hi:
        pos = np.flatnonzero(labels == 1)
        labels[pos[np.argsort(score[pos], kind="stable")[: npos - hi]]] = -1
    elif npos < lo:
        neg = np.flatnonzero(labels == -1)
        labels[neg[np.argsort(-score[neg], kind="stable")[: lo - npos]]] = 1
    return labels


class _Problem:
    def __init__(self, labeled: svm.Dataset, Xu, cfg: S4vmConfig):
        self.Xl, self.yl = labeled.X, labeled.y
        self.Xu = np.ascontiguousarray(Xu, dtype=np.float64)
        self.l, self.u = len(self.yl), len(self.Xu)
        self.X = np.vstack([self.Xl, self.Xu])
        self.Cvec = np.concatenate([np.full(self.l, cfg.C1), np.full(self.u, cfg.C2)])
        self.cfg = cfg
        n = self.l + self.u
        # every refit uses the same points, so the kernel is computed once
        self.K = svm.kernel_matrix(self.X, self.X, cfg.gamma) if n <= KERNEL_PRECOMPUTE_LIMIT else None
        self.lo, self.hi = _count_band(self.u, _band(self.yl, cfg))

    def fit(self, y_hat):
        y = np.concatenate([self.yl, y_hat])
        fit = _fit(self.X, y, self.Cvec, self.cfg.gamma, self.cfg.tol, self.K)
        fl, fu = fit.f[: self.l], fit.f[self.l :]
        obj = 0.5 * fit.w2 + self.cfg.C1 * float(np.sum(_hinge(self.yl * fl))) + self.cfg.C2 * float(np.sum(_hinge(y_hat * fu)))
        return fit, fu, obj


def _anneal(prob: _Problem, init, rng) -> CandidateSeparator:
    cfg = prob.cfg
    y_hat = _project_balance(init, np.zeros(prob.u), prob.lo, prob.hi)
    fit, fu, obj = prob.fit(y_hat)
    best = CandidateSeparator(y_hat.copy(), fit.model, obj, fu.copy())
    temp = None
    for _ in range(cfg.anneal_rounds):
        # flip cost of every unlabeled point against the current model
        delta = cfg.C2 * (_hinge(-y_hat * fu) - _hinge(y_hat * fu))
        if temp is None:
            up = delta[delta > 0]
            temp = float(np.median(up)) / np.log(1.0 / cfg.uphill_accept) if len(up) else 0.0
        npos = int(np.sum(y_hat == 1))
        changed = 0
        for j in rng.permutation(prob.u):
            if rng.random() < 0.5:
                k = j
                new_pos = npos + (1 if y_hat[j] == -1 else -1)
                if not prob.lo <= new_pos <= prob.hi:
                    continue
                d = delta[j]
                if d < 0 or (temp > 0 and rng.random() < np.exp(-d / temp)):
                    y_hat[j] = -y_hat[j]
                    delta[j] = -delta[j]
                    npos = new_pos
                    changed += 1
            else:
                opp = np.flatnonzero(y_hat == -y_hat[j])
                if len(opp) == 0:
                    continue
                k = int(opp[rng.integers(len(opp))])
                d = delta[j] + delta[k]
                if d < 0 or (temp > 0 and rng.random() < np.exp(-d / temp)):
                    y_hat[j], y_hat[k] = -y_hat[j], -y_hat[k]
                    delta[j], delta[k] = -delta[j], -delta[k]
                    changed += 2
        if changed == 0:
            break
        fit, fu, obj = prob.fit(y_hat)
        if obj < best.objective:
            best = CandidateSeparator(y_hat.copy(), fit.model, obj, fu.copy())
        temp *= cfg.cooling
    # Zero-temperature quench: greedy relabel against the model and refit
    # until the labels are a fixed point.  This descends in exact arithmetic,
    # so it is not gated on the objective, whose value inherits the solver's
    # duality gap (large when C1 is large).
    y_hat, fu = best.labels.copy(), best.f_unlabeled
    for _ in range(4 * cfg.anneal_rounds):
        greedy = np.where(fu > 0, 1, np.where(fu < 0, -1, y_hat))
        greedy = _project_balance(greedy, fu, prob.lo, prob.hi)
        if np.array_equal(greedy, y_hat):
            break
        y_hat = greedy
        fit, fu, obj = prob.fit(y_hat)
        best = CandidateSeparator(y_hat.copy(), fit.model, obj, fu.copy())
    return best


def _overlap(a, b) -> float:
    return float(a @ b) / len(a)


def _initial(kind: int, prob: _Problem, baseline_f, rng) -> np.ndarray:
    if kind == 0:
        return np.where(baseline_f >= 0, 1, -1)
    if kind == 1:
        # class-normalized kernel similarity vote
        K = svm.kernel_matrix(prob.Xu, prob.Xl, prob.cfg.gamma)
        pos, neg = prob.yl == 1, prob.yl == -1
        score = K[:, pos].mean(axis=1) - K[:, neg].mean(axis=1)
        return np.where(score >= 0, 1, -1)
    # random labels at a random positive count inside the band
    npos = int(rng.integers(prob.lo, prob.hi + 1))
    y = -np.ones(prob.u, dtype=np.int64)
    y[rng.permutation(prob.u)[:npos]] = 1
    return y


def generate_candidates(labeled: svm.Dataset, X_unlabeled, cfg: S4vmConfig, baseline_f=None) -> CandidateSet:
    """Annealed candidate separators, filtered for diversity.

    Restarts cycle through three initializations: the supervised prediction,
    a kernel-similarity vote, and random labels.  Candidates are kept greedily
    by objective while their overlap with every kept one is below
    1 - diversity.  If fewer than two survive, extra random restarts are
    tried; the set is flagged ``padded`` whenever that was needed.
    """
    if len(np.unique(labeled.y)) < 2:
        raise S4vmError("labeled data must contain both classes")
    prob = _Problem(labeled, X_unlabeled, cfg)
    if prob.u == 0:
        raise S4vmError("no unlabeled samples")
    if baseline_f is None:
        base = svm.train(labeled, cfg.C1, cfg.gamma, cfg.tol)
        baseline_f = base.decision_function(prob.Xu)
    streams = np.random.default_rng(cfg.seed).spawn(cfg.restarts + cfg.pad_attempts)
    found = [_anneal(prob, _initial(r % 3, prob, baseline_f, streams[r]), streams[r]) for r in range(cfg.restarts)]
    found.sort(key=lambda c: c.objective)
    limit = 1.0 - cfg.diversity
    kept: list[CandidateSeparator] = []

    def offer(c):
        if len(kept) < cfg.T and all(_overlap(c.labels, k.labels) < limit for k in kept):
            kept.append(c)

    for c in found:
        offer(c)
    padded = False
    attempts = cfg.restarts
    if len(kept) < 2:
        padded = True
        for p in range(cfg.pad_attempts):
            rng = streams[cfg.restarts + p]
            c = _anneal(prob, _initial(2, prob, baseline_f, rng), rng)
            attempts += 1
            offer(c)
            if len(kept) >= 2:
                break
    return CandidateSet(kept, padded, attempts)


# -- safe assignment ---------------------------------------------------------


def _safe_value(y, cand: np.ndarray, base_agree: np.ndarray) -> float:
    return float(np.min(np.mean(cand == y[None, :], axis=1) - base_agree))


def _polish(y, cand, baseline, pair_block: int = 4_000_000):
    """Steepest ascent over single and pair flips on the exact integer objective.

    With V_t = 2u * [agree(y, y_t) - agree(y_svm, y_t)] (an integer), moves
    are ranked by (min_t V_t, sum_t V_t) lexicographically.
    """
    T, u = cand.shape
    y = y.copy()
    V = cand @ y - cand @ baseline
    big = 4 * u * T + 1

    def key(v, axis=0):
        return v.min(axis=axis) * big + v.sum(axis=axis)

    cur = int(key(V))
    while True:
        D = -2 * cand * y[None, :]
        singles = key(V[:, None] + D)
        j = int(np.argmax(singles))
        if singles[j] > cur:
            y[j] = -y[j]
            V = V + D[:, j]
            cur = int(singles[j])
            continue
        best, move = cur, None
        rows = max(1, pair_block // max(1, T * u))
        for start in range(0, u, rows):
            blk = V[:, None, None] + D[:, start : start + rows, None] + D[:, None, :]
            keys = key(blk)
            flat = int(np.argmax(keys))
            if keys.flat[flat] > best:
                best = int(keys.flat[flat])
                move = (start + flat // u, flat % u)
        if move is None:
            return y
        j, k = move
        y[j], y[k] = -y[j], -y[k]
        V = V + D[:, j] + D[:, k]
        cur = best


def safe_assign(candidate_labels, baseline, iters: int = 500) -> SafeAssignment:
    """Labels maximizing min_t [agree(y, y_t) - agree(y_svm, y_t)].

    The objective is relaxed to y in [-1, 1]^u and solved by projected
    subgradient ascent, rounded by sign (ties keep the baseline label), and
    polished by single and pair flips.  The baseline itself scores 0, so the
    returned value is never negative.
    """
    cand = np.atleast_2d(np.asarray(candidate_labels, dtype=np.int64))
    if cand.size == 0:
        raise S4vmError("need at least one candidate")
    baseline = np.asarray(baseline, dtype=np.int64)
    T, u = cand.shape
    if baseline.shape != (u,):
        raise S4vmError("baseline length does not match the candidates")
    base_agree = np.mean(cand == baseline[None, :], axis=1)
    # agree(y, y_t) = 1/2 + y.y_t / 2u for y in {-1, 1}^u
    c = 0.5 - base_agree
    A = cand.astype(np.float64) / (2.0 * u)

    z = baseline.astype(np.float64)
    best_z, best_val = z.copy(), float(np.min(c + A @ z))
    for k in range(iters):
        vals = c + A @ z
        t = int(np.argmin(vals))
        z = np.clip(z + (1.0 / np.sqrt(k + 1.0)) * u * A[t], -1.0, 1.0)
        v = float(np.min(c + A @ z))
        if v > best_val + 1e-15:
            best_z, best_val = z.copy(), v
    relaxed = best_val
    y = np.where(best_z > 0, 1, np.where(best_z < 0, -1, baseline))

    y = _polish(y, cand, baseline)
    value = _safe_value(y, cand, base_agree)
    if value < 0.0:
        y, value = baseline.copy(), 0.0
    return SafeAssignment(y, value, relaxed, max(0.0, relaxed - value))


# -- prediction protocols ----------------------------------------------------


def s4vm_predict(labeled: svm.Dataset, X_unlabeled, cfg: S4vmConfig) -> S4vmPrediction:
    """Safe labels for the unlabeled points plus decision values for sorting.

    The decision values come from the best-objective candidate.
    """
    Xu = np.atleast_2d(np.asarray(X_unlabeled, dtype=np.float64))
    base_model = svm.train(labeled, cfg.C1, cfg.gamma, cfg.tol)
    base_f = base_model.decision_function(Xu)
    baseline = np.where(base_f >= 0, 1, -1)
    cands = generate_candidates(labeled, Xu, cfg, base_f)
    safe = safe_assign(np.array([c.labels for c in cands.candidates]), baseline)
    return S4vmPrediction(safe.labels, cands.candidates[0].f_unlabeled.copy(), baseline, safe, cands)


def renewal_plan(f, m: int) -> GroupingPlan:
    """Outside-in groups: group g takes the g-th slice of u/(2m) points from
    the top and from the bottom of f sorted descending; any remainder joins
    the last group."""
    f = np.asarray(f, dtype=np.float64)
    u = len(f)
    if m < 1 or 2 * m > u:
        raise S4vmError(f"group count {m} must lie in 1..{u // 2}")
    order = np.argsort(-f, kind="stable")
    s = u // (2 * m)
    groups = []
    for g in range(m):
        top = order[g * s : (g + 1) * s]
        bottom = order[u - (g + 1) * s : u - g * s]
        groups.append(np.concatenate([top, bottom[::-1]]))
    middle = order[m * s : u - m * s]
    if len(middle):
        groups[-1] = np.concatenate([groups[-1], middle])
    return GroupingPlan(groups, "renewal" if m > 1 else "none")


def random_plan(u: int, m: int, rng: np.random.Generator) -> GroupingPlan:
    if m < 1 or m > u:
        raise S4vmError(f"group count {m} must lie in 1..{u}")
    perm = rng.permutation(u)
    return GroupingPlan([np.sort(g) for g in np.array_split(perm, m)], "random" if m > 1 else "none")


def single_plan(u: int) -> GroupingPlan:
    return GroupingPlan([np.arange(u)], "none")


def iterative_predict(labeled: svm.Dataset, X_unlabeled, plan: GroupingPlan, cfg: S4vmConfig, y_true=None, protocol: str | None = None) -> SemisupRun:
    """Predict the plan's groups in order, growing the training set with
    each group's predicted labels.  Mean accuracy is the unweighted mean of
    the per-group accuracies."""
    Xu = np.atleast_2d(np.asarray(X_unlabeled, dtype=np.float64))
    plan.validate(len(Xu))
    run = SemisupRun(protocol or plan.strategy, plan)
    train_X, train_y = labeled.X, labeled.y
    for g, idx in enumerate(plan.groups):
        run.train_sizes.append(len(train_y))
        try:
            pred = s4vm_predict(svm.Dataset(train_X, train_y), Xu[idx], replace(cfg, seed=cfg.seed + g))
        except (S4vmError, svm.SvmError) as exc:
            run.complete = False
            run.error = f"group {g}: {exc}"
            break
        run.group_labels.append(pred.labels)
        run.group_f.append(pred.f)
        if y_true is not None:
            run.group_accuracy.append(float(np.mean(pred.labels == np.asarray(y_true)[idx])))
        train_X = np.vstack([train_X, Xu[idx]])
        train_y = np.concatenate([train_y, pred.labels])
    if run.group_accuracy:
        run.mean_accuracy = float(np.mean(run.group_accuracy))
    return run


def active_select(rhos, k: int, labels=None) -> np.ndarray:
    """Indices of the states with the smallest mean trace distance to the rest.

    With labels, k/2 are taken from each class.  Ties go to the lower index.
    """
    rhos = np.asarray(rhos)
    n = len(rhos)
    if k > n:
        raise S4vmError(f"cannot select {k} from a pool of {n}")
    d = mean_trace_distances(rhos)
    if labels is None:
        return np.sort(np.argsort(d, kind="stable")[:k])
    labels = np.asarray(labels)
    if k % 2:
        raise S4vmError("balanced selection needs an even k")
    out = []
    for cls in (1, -1):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < k // 2:
            raise S4vmError(f"class {cls:+d} has only {len(idx)} states")
        out.append(idx[np.argsort(d[idx], kind="stable")[: k // 2]])
    return np.sort(np.concatenate(out))
