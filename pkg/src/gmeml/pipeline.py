"""Experiment driver: dataset generation, experiment runners and reports.

All randomness is derived from the master seed.  State ``i`` of a dataset is
drawn from ``default_rng([seed, i])`` and repetition ``r`` of an experiment
from ``default_rng([seed, tag, r])``, so results do not depend on worker
count or scheduling.  Reports contain no timestamps or timings (those go to a
separate ``timing.json``) so that identical seeds give byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gmeml import gmn, s4vm, states, svm
from gmeml.sdp import SolverConfig

log = logging.getLogger("gmeml")

DATASET_SCHEMA = 1
REPORT_SCHEMA = 1
PROTOCOLS = ("s4vm", "svm-s4vm", "renewal")
# per-experiment stream tags mixed into the master seed
_TAG_SPLIT, _TAG_CV, _TAG_SEMISUP, _TAG_ACTIVE, _TAG_AUDIT, _TAG_CURVE = 11, 12, 13, 14, 15, 16


class ConfigError(ValueError):
    pass


class QuotaError(RuntimeError):
    pass


class SchemaError(ValueError):
    pass


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class GenerateConfig:
    quota_pos: int = 1000  # label +1 (not GME)
    quota_neg: int = 1000  # label -1 (GME)
    weights: dict = field(default_factory=lambda: {"ginibre": 0.4, "pure_random": 0.1, "biseparable_mix": 0.3, "ghz_noise": 0.1, "product": 0.1})
    batch: int = 64
    max_attempts: int | None = None  # default 20 x total quota
    layout: str = "pauli"
    store_matrices: bool = False
    solver_max_iters: int = 80


@dataclass(frozen=True)
class SupervisedConfig:
    test_fraction: float = 0.2
    train_size: int | None = None  # per split; None uses every balanced record
    C_grid: tuple = svm.DEFAULT_C_GRID
    gamma_grid: tuple = svm.DEFAULT_GAMMA_GRID
    folds: int = 5
    tol: float = 1e-3
    cv_subsample: int = 2000
    screen_subsample: int = 1000
    screen_folds: int = 3
    screen_min_gain: float = 0.001
    screen_max_rounds: int = 5
    seeds: int = 5
    curve_counts: tuple = (64, 62, 60, 58, 56, 54, 52, 48, 44, 40)
    curve_repetitions: int = 3
    curve_subsample: int = 2000


@dataclass(frozen=True)
class SemisupConfig:
    l_values: tuple = (40, 60, 80)
    u: int = 2000
    m_values: tuple = (2, 4, 8, 16)
    repetitions: int = 6
    protocols: tuple = PROTOCOLS
    C1: float | None = None  # None: chosen by CV on the labeled set
    C2: float = 0.1
    gamma: float | None = None
    C1_grid: tuple = (1.0, 10.0, 100.0)
    gamma_grid: tuple = (0.01, 0.0316, 0.1, 0.316, 1.0)
    cv_folds: int = 5
    T: int = 10
    restarts: int = 20
    anneal_rounds: int = 10
    cooling: float = 0.95
    diversity: float = 0.5
    balance_width: float = 0.1


@dataclass(frozen=True)
class ActiveConfig:
    pool_size: int = 2000
    k: int = 60
    seeds: int = 6
    m_values: tuple = (8,)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    jobs: int = 1
    audit_fraction: float = 0.01
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    supervised: SupervisedConfig = field(default_factory=SupervisedConfig)
    semisup: SemisupConfig = field(default_factory=SemisupConfig)
    active: ActiveConfig = field(default_factory=ActiveConfig)

    def validate(self) -> ExperimentConfig:
        g, s, a = self.generate, self.semisup, self.active
        if g.quota_pos < 0 or g.quota_neg < 0:
            raise ConfigError("quotas must be non-negative")
        if not g.weights or any(k not in states.GENERATOR_KINDS for k in g.weights) or min(g.weights.values()) < 0 or sum(g.weights.values()) <= 0:
            raise ConfigError(f"generator weights must be non-negative over {states.GENERATOR_KINDS}")
        if g.layout not in ("pauli", "triangle"):
            raise ConfigError(f"unknown feature layout {g.layout!r}")
        if g.batch < 1:
            raise ConfigError("batch must be positive")
        if not 0.0 < self.supervised.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if any(v % 2 or v < 4 for v in s.l_values):
            raise ConfigError("every l must be even and at least 4")
        if s.u % 2 or s.u < 2:
            raise ConfigError("u must be even")
        if any(m < 1 or 2 * m > s.u for m in s.m_values):
            raise ConfigError("every m must lie in 1..u/2")
        if s.repetitions < 1:
            raise ConfigError("need at least one repetition")
        if any(p not in PROTOCOLS for p in s.protocols):
            raise ConfigError(f"protocols must be drawn from {PROTOCOLS}")
        if a.k % 2 or a.k > a.pool_size:
            raise ConfigError("active k must be even and no larger than the pool")
        if not 0.0 <= self.audit_fraction <= 1.0:
            raise ConfigError("audit_fraction must lie in [0, 1]")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")
        return self

    # serialization
    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        try:
            sub = {}
            for name, typ in (("generate", GenerateConfig), ("supervised", SupervisedConfig), ("semisup", SemisupConfig), ("active", ActiveConfig)):
                sub[name] = _build(typ, d.get(name, {}))
            top = {k: v for k, v in d.items() if k not in sub}
            unknown = set(top) - {"seed", "jobs", "audit_fraction"}
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            return cls(**top, **sub).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def hash(self) -> str:
        """Stable digest of everything that can change results (``jobs`` cannot)."""
        d = self.to_dict()
        d.pop("jobs")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def with_overrides(self, seed=None, jobs=None, audit_fraction=None) -> ExperimentConfig:
        kw = {}
        if seed is not None:
            kw["seed"] = int(seed)
        if jobs is not None:
            kw["jobs"] = int(jobs)
        if audit_fraction is not None:
            kw["audit_fraction"] = float(audit_fraction)
        return dataclasses.replace(self, **kw).validate()


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _build(typ, d: dict):
    if not isinstance(d, dict):
        raise ConfigError(f"section for {typ.__name__} must be an object")
    names = {f.name: f for f in dataclasses.fields(typ)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {typ.__name__}: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return typ(**kw)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig().validate()
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return ExperimentConfig.from_dict(d)


# -- dataset generation ------------------------------------------------------


def _draw(seed: int, index: int, kind: str):
    rng = np.random.default_rng([seed, index])
    spec = states.GeneratorSpec(kind, local_unitary=(kind == "ghz_noise"))
    return states.random_density(rng, spec)


def _choose_kind(seed: int, index: int, weights: dict) -> str:
    kinds = sorted(weights)
    p = np.array([weights[k] for k in kinds], dtype=np.float64)
    # separate stream from the state itself so the kind never shifts the state draw
    u = np.random.default_rng([seed, index, 1]).random()
    return kinds[int(np.searchsorted(np.cumsum(p / p.sum()), u, side="right").clip(0, len(kinds) - 1))]


def _label_task(args):
    seed, index, kind, layout, max_iters, store = args
    rho = _draw(seed, index, kind)
    rec = {"index": index, "seed": [seed, index], "generator": kind}
    try:
        label, res = gmn.label_state(rho, cfg=SolverConfig(max_iters=max_iters))
    except gmn.GmnSolverError as exc:
        rec["status"] = "failed"
        rec["error"] = str(exc)
        return rec
    rec.update(
        features=[float(v) for v in states.bloch_features(rho, layout)],
        gmn=float(res.value),
        label=int(label),
        status=res.status,
        duality_gap=float(res.duality_gap),
    )
    if store:
        rec["matrix"] = [[float(z.real), float(z.imag)] for z in rho.ravel()]
    return rec


def _adapted_weights(base: dict, stats: dict, rem_pos: int, rem_neg: int) -> dict:
    """Tilt generator weights towards kinds that produce the classes still needed."""
    out = {}
    total = rem_pos + rem_neg
    for k, w in base.items():
        n, neg = stats[k]["labeled"], stats[k]["neg"]
        p_neg = (neg + 1.0) / (n + 2.0)
        out[k] = w * (rem_neg * p_neg + rem_pos * (1.0 - p_neg)) / total
    if sum(out.values()) <= 0:
        return dict(base)
    return out


@dataclass
class GenerateResult:
    path: Path
    records: int
    attempts: int
    stats: dict


def cmd_generate(cfg: ExperimentConfig, out_dir: str | Path, name: str = "dataset.jsonl") -> GenerateResult:
    g = cfg.generate
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    rem = {1: g.quota_pos, -1: g.quota_neg}
    max_attempts = g.max_attempts if g.max_attempts is not None else 20 * (g.quota_pos + g.quota_neg) + g.batch
    stats = {k: {"drawn": 0, "labeled": 0, "neg": 0, "accepted": 0, "failed": 0} for k in g.weights}
    accepted = []
    index = 0
    pool = ProcessPoolExecutor(max_workers=cfg.jobs) if cfg.jobs > 1 else None
    t0 = time.time()
    try:
        while (rem[1] > 0 or rem[-1] > 0) and index < max_attempts:
            weights = _adapted_weights(g.weights, stats, rem[1], rem[-1])
            n = min(g.batch, max_attempts - index)
            tasks = [(cfg.seed, i, _choose_kind(cfg.seed, i, weights), g.layout, g.solver_max_iters, g.store_matrices) for i in range(index, index + n)]
            results = list(pool.map(_label_task, tasks)) if pool else [_label_task(t) for t in tasks]
            index += n
            for rec in results:
                st = stats[rec["generator"]]
                st["drawn"] += 1
                if rec["status"] != "optimal":
                    st["failed"] += 1
                    continue
                st["labeled"] += 1
                st["neg"] += rec["label"] == -1
                if rem[rec["label"]] > 0:
                    rem[rec["label"]] -= 1
                    st["accepted"] += 1
                    accepted.append(rec)
            log.info("generate: %d drawn, %d accepted, remaining +1:%d -1:%d", index, len(accepted), rem[1], rem[-1])
    finally:
        if pool:
            pool.shutdown()
    for k, st in stats.items():
        st["acceptance_rate"] = st["accepted"] / st["drawn"] if st["drawn"] else 0.0
    if rem[1] > 0 or rem[-1] > 0:
        raise QuotaError(f"quotas unreachable after {index} attempts (missing +1:{rem[1]} -1:{rem[-1]}); per-generator stats: {json.dumps(stats, sort_keys=True)}")
    with open(path, "w") as fh:
        for rec in accepted:
            rec = dict(rec, schema_version=DATASET_SCHEMA, layout=g.layout)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    summary = {"schema_version": REPORT_SCHEMA, "kind": "generate", "config_hash": cfg.hash(), "records": len(accepted), "attempts": index, "generators": stats}
    (out_dir / "generate_stats.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _write_timing(out_dir, "generate", time.time() - t0)
    return GenerateResult(path, len(accepted), index, stats)


def load_records(path: str | Path) -> list[dict]:
    recs = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                if rec.get("schema_version") != DATASET_SCHEMA:
                    raise SchemaError(f"dataset schema {rec.get('schema_version')} != {DATASET_SCHEMA}")
                recs.append(rec)
    return recs


def records_to_dataset(recs: list[dict]) -> svm.Dataset:
    X = np.array([r["features"] for r in recs], dtype=np.float64).reshape(len(recs), -1)
    y = np.array([r["label"] for r in recs], dtype=np.int64)
    return svm.Dataset(X, y)


def record_density(rec: dict) -> np.ndarray:
    if "matrix" in rec:
        m = np.array(rec["matrix"], dtype=np.float64)
        return (m[:, 0] + 1j * m[:, 1]).reshape(states.DIM, states.DIM)
    return states.density_from_features(rec["features"], rec.get("layout", "pauli"))


@dataclass
class AuditResult:
    checked: int
    mismatches: list

    @property
    def passed(self) -> bool:
        return not self.mismatches


def audit_dataset(recs: list[dict], fraction: float, seed: int) -> AuditResult:
    """Re-solve a random fraction of records and compare labels."""
    if fraction <= 0 or not recs:
        return AuditResult(0, [])
    n = max(1, int(round(fraction * len(recs))))
    rng = np.random.default_rng([seed, _TAG_AUDIT])
    idx = np.sort(rng.choice(len(recs), size=min(n, len(recs)), replace=False))
    bad = []
    for i in idx:
        rec = recs[int(i)]
        label, res = gmn.label_state(record_density(rec))
        if label != rec["label"] or not gmn.verify_certificate(res.certificate, record_density(rec)):
            bad.append(int(rec["index"]))
    return AuditResult(len(idx), bad)


def _balanced_indices(y, rng) -> tuple[np.ndarray, np.ndarray]:
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == -1)
    return pos[rng.permutation(len(pos))], neg[rng.permutation(len(neg))]


def _write_timing(out_dir: Path, key: str, seconds: float) -> None:
    path = out_dir / "timing.json"
    data = json.loads(path.read_text()) if path.exists() else {}
    data[key] = seconds
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def _write_report(out_dir: Path, name: str, report: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n")
    return path


# -- supervised --------------------------------------------------------------


def _split(data: svm.Dataset, test_fraction: float, train_size: int | None, rng) -> tuple[np.ndarray, np.ndarray]:
    pos, neg = _balanced_indices(data.y, rng)
    per = min(len(pos), len(neg))
    n_test = int(round(test_fraction * per))
    n_train = per - n_test if train_size is None else min(per - n_test, train_size // 2)
    tr = np.sort(np.concatenate([pos[:n_train], neg[:n_train]]))
    te = np.sort(np.concatenate([pos[n_train : n_train + n_test], neg[n_train : n_train + n_test]]))
    return tr, te


def _balanced_subsample(data: svm.Dataset, n: int, rng) -> svm.Dataset:
    if n >= len(data):
        return data
    pos, neg = _balanced_indices(data.y, rng)
    return data.subset(np.sort(np.concatenate([pos[: n // 2], neg[: n - n // 2]])))


def cmd_supervised(cfg: ExperimentConfig, dataset_path: str | Path, out_dir: str | Path) -> dict:
    sc = cfg.supervised
    out_dir = Path(out_dir)
    t0 = time.time()
    recs = load_records(dataset_path)
    data = records_to_dataset(recs)
    tcfg = svm.TrainConfig(C_grid=tuple(sc.C_grid), gamma_grid=tuple(sc.gamma_grid), folds=sc.folds, tol=sc.tol, jobs=cfg.jobs)
    # hyperparameters once per run, on the first split
    tr0, _ = _split(data, sc.test_fraction, sc.train_size, np.random.default_rng([cfg.seed, _TAG_SPLIT, 0]))
    cv_data = _balanced_subsample(data.subset(tr0), sc.cv_subsample, np.random.default_rng([cfg.seed, _TAG_CV]))
    cv = svm.cross_validate(cv_data, tcfg, np.random.default_rng([cfg.seed, _TAG_CV, 1]))
    log.info("supervised: best C=%.4g gamma=%.4g cv=%.4f", cv.C, cv.gamma, cv.accuracy)
    screen_cfg = dataclasses.replace(tcfg, folds=sc.screen_folds)
    rows = []
    first_screen = None
    for s in range(sc.seeds):
        rng = np.random.default_rng([cfg.seed, _TAG_SPLIT, s])
        tr, te = _split(data, sc.test_fraction, sc.train_size, rng)
        train_d, test_d = data.subset(tr), data.subset(te)
        base = svm.train(train_d, cv.C, cv.gamma, sc.tol)
        acc_before = float(np.mean(base.predict(test_d.X) == test_d.y))
        kkt_before = svm.kkt_audit(base, train_d, sc.tol)
        scr_data = _balanced_subsample(train_d, sc.screen_subsample, rng)
        scr = svm.screen_features(scr_data, screen_cfg, cv.C, cv.gamma, rng, sc.screen_min_gain, sc.screen_max_rounds)
        if first_screen is None:
            first_screen = scr
        screened = svm.train(train_d, cv.C, cv.gamma, sc.tol, feature_mask=scr.mask)
        acc_after = float(np.mean(screened.predict(test_d.X) == test_d.y))
        kkt_after = svm.kkt_audit(screened, train_d, sc.tol)
        rows.append(
            {
                "seed": s,
                "train_size": len(tr),
                "test_size": len(te),
                "accuracy_before": acc_before,
                "accuracy_after": acc_after,
                "delta_pp": 100.0 * (acc_after - acc_before),
                "dropped": scr.dropped,
                "cv_before": scr.accuracy_before,
                "cv_after": scr.accuracy_after,
                "kkt_passed": bool(kkt_before.passed and kkt_after.passed),
                "converged": bool(base.converged and screened.converged),
                "n_support": int(len(base.support)),
            }
        )
        log.info("supervised seed %d: %.4f -> %.4f (dropped %s)", s, acc_before, acc_after, scr.dropped)
    # feature curve along the first screening's single-drop gains
    order = np.argsort(-np.nan_to_num(first_screen.gains, neginf=-1.0), kind="stable")
    counts = [c for c in sc.curve_counts if 1 <= c <= data.n_features]
    tr, te = _split(data, sc.test_fraction, sc.train_size, np.random.default_rng([cfg.seed, _TAG_SPLIT, 0]))
    curve = svm.accuracy_vs_feature_count(
        data.subset(tr),
        data.subset(te),
        order[: data.n_features - min(counts)],
        cv.C,
        cv.gamma,
        [[cfg.seed, _TAG_CURVE, r] for r in range(max(2, sc.curve_repetitions))],
        counts=counts,
        cfg=tcfg,
        subsample=sc.curve_subsample,
    )
    before = np.array([r["accuracy_before"] for r in rows])
    after = np.array([r["accuracy_after"] for r in rows])
    report = {
        "schema_version": REPORT_SCHEMA,
        "kind": "supervised",
        "config_hash": cfg.hash(),
        "best": {"C": cv.C, "gamma": cv.gamma, "cv_accuracy": cv.accuracy},
        "cv_table": {"C_grid": list(cv.C_grid), "gamma_grid": list(cv.gamma_grid), "accuracy": cv.table.tolist()},
        "rows": rows,
        "summary": {
            "accuracy_before_mean": float(before.mean()),
            "accuracy_before_std": float(before.std()),
            "accuracy_after_mean": float(after.mean()),
            "accuracy_after_std": float(after.std()),
            "delta_pp_mean": float(100.0 * (after - before).mean()),
            "positive_delta_seeds": int(np.sum(after > before)),
        },
        "feature_curve": {"counts": curve.counts.tolist(), "mean": curve.mean.tolist(), "std": curve.std.tolist(), "removal_order": [int(v) for v in curve.order]},
    }
    _write_report(out_dir, "supervised.json", report)
    _write_timing(out_dir, "supervised", time.time() - t0)
    return report


# -- semi-supervised ---------------------------------------------------------


def _s4vm_config(sc: SemisupConfig, labeled: svm.Dataset, rng_seed) -> s4vm.S4vmConfig:
    C1, gamma = sc.C1, sc.gamma
    if C1 is None or gamma is None:
        folds = min(sc.cv_folds, int(min(np.sum(labeled.y == 1), np.sum(labeled.y == -1))))
        tcfg = svm.TrainConfig(
            C_grid=(C1,) if C1 is not None else tuple(sc.C1_grid),
            gamma_grid=(gamma,) if gamma is not None else tuple(sc.gamma_grid),
            folds=max(2, folds),
        )
        cv = svm.cross_validate(labeled, tcfg, np.random.default_rng(rng_seed))
        C1, gamma = cv.C, cv.gamma
    return s4vm.S4vmConfig(
        T=sc.T,
        C1=C1,
        C2=sc.C2,
        gamma=gamma,
        diversity=sc.diversity,
        balance_width=sc.balance_width,
        restarts=sc.restarts,
        anneal_rounds=sc.anneal_rounds,
        cooling=sc.cooling,
        seed=int(np.random.default_rng(rng_seed).integers(2**31)),
    )


def _draw_split(data: svm.Dataset, l: int, u: int, rng, exclude=None):
    pos, neg = _balanced_indices(data.y, rng)
    if exclude is not None:
        pos = pos[~np.isin(pos, exclude)]
        neg = neg[~np.isin(neg, exclude)]
    need_l = l // 2
    if min(len(pos), len(neg)) < need_l + u // 2:
        raise ConfigError(f"dataset too small for l={l}, u={u}")
    lab = np.sort(np.concatenate([pos[:need_l], neg[:need_l]]))
    unl = np.sort(np.concatenate([pos[need_l : need_l + u // 2], neg[need_l : need_l + u // 2]]))
    return lab, unl


def _run_protocols(labeled: svm.Dataset, Xu, yu, sc: SemisupConfig, cfg4: s4vm.S4vmConfig, m_values, rng, protocols) -> list[dict]:
    rows = []
    plain = s4vm.iterative_predict(labeled, Xu, s4vm.single_plan(len(Xu)), cfg4, yu, protocol="s4vm")
    f = plain.group_f[0]
    for m in m_values:
        for proto in protocols:
            if proto == "s4vm":
                run = plain
            elif proto == "svm-s4vm":
                run = s4vm.iterative_predict(labeled, Xu, s4vm.random_plan(len(Xu), m, rng), cfg4, yu, protocol=proto)
            else:
                run = s4vm.iterative_predict(labeled, Xu, s4vm.renewal_plan(f, m), cfg4, yu, protocol=proto)
            rows.append(
                {
                    "protocol": proto,
                    "m": int(m),
                    "mean_accuracy": run.mean_accuracy,
                    "first_group_accuracy": run.group_accuracy[0] if run.group_accuracy else float("nan"),
                    "group_accuracy": run.group_accuracy,
                    "complete": run.complete,
                }
            )
    return rows


def _semisup_task(args):
    data, l, rep, seed, sc = args
    rng = np.random.default_rng([seed, _TAG_SEMISUP, l, rep])
    lab, unl = _draw_split(data, l, sc.u, rng)
    labeled = data.subset(lab)
    cfg4 = _s4vm_config(sc, labeled, [seed, _TAG_CV, l, rep])
    rows = _run_protocols(labeled, data.X[unl], data.y[unl], sc, cfg4, sc.m_values, rng, sc.protocols)
    for r in rows:
        r.update(l=int(l), repetition=int(rep), C1=cfg4.C1, gamma=cfg4.gamma)
    return rows


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def _aggregate(rows: list[dict], keys: tuple) -> list[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r["mean_accuracy"])
    out = []
    for k in sorted(groups, key=lambda t: tuple(str(v) for v in t)):
        v = np.array(groups[k])
        out.append({**dict(zip(keys, k)), "mean": float(v.mean()), "std": float(v.std()), "n": int(len(v))})
    return out


def cmd_semisup(cfg: ExperimentConfig, dataset_path: str | Path, out_dir: str | Path) -> dict:
    sc = cfg.semisup
    out_dir = Path(out_dir)
    t0 = time.time()
    data = records_to_dataset(load_records(dataset_path))
    tasks = [(data, l, rep, cfg.seed, sc) for l in sc.l_values for rep in range(sc.repetitions)]
    rows = [r for chunk in _map(_semisup_task, tasks, cfg.jobs) for r in chunk]
    report = {
        "schema_version": REPORT_SCHEMA,
        "kind": "semisup",
        "config_hash": cfg.hash(),
        "rows": rows,
        "summary": {
            "by_protocol": _aggregate(rows, ("protocol",)),
            "by_protocol_l": _aggregate(rows, ("protocol", "l")),
            "by_protocol_m": _aggregate(rows, ("protocol", "m")),
            "by_protocol_l_m": _aggregate(rows, ("protocol", "l", "m")),
        },
    }
    _write_report(out_dir, "semisup.json", report)
    _write_timing(out_dir, "semisup", time.time() - t0)
    return report


# -- active learning ---------------------------------------------------------


def _active_task(args):
    recs_X, recs_y, rhos, seed, rep, sc, ac = args
    data = svm.Dataset(recs_X, recs_y)
    rng = np.random.default_rng([seed, _TAG_ACTIVE, rep])
    pos, neg = _balanced_indices(data.y, rng)
    half = ac.pool_size // 2
    pool = np.sort(np.concatenate([pos[:half], neg[:half]]))
    rest_pos, rest_neg = pos[half:], neg[half:]
    if min(len(rest_pos), len(rest_neg)) < sc.u // 2:
        raise ConfigError(f"dataset too small for pool {ac.pool_size} plus u={sc.u}")
    unl = np.sort(np.concatenate([rest_pos[: sc.u // 2], rest_neg[: sc.u // 2]]))
    chosen_active = pool[s4vm.active_select(rhos[pool], ac.k, data.y[pool])]
    ppos, pneg = pool[data.y[pool] == 1], pool[data.y[pool] == -1]
    chosen_random = np.sort(np.concatenate([rng.choice(ppos, ac.k // 2, replace=False), rng.choice(pneg, ac.k // 2, replace=False)]))
    rows = []
    for strategy, lab in (("active", chosen_active), ("random", chosen_random)):
        labeled = data.subset(lab)
        cfg4 = _s4vm_config(sc, labeled, [seed, _TAG_CV, _TAG_ACTIVE, rep])
        prng = np.random.default_rng([seed, _TAG_ACTIVE, rep, 1])
        for r in _run_protocols(labeled, data.X[unl], data.y[unl], sc, cfg4, ac.m_values, prng, sc.protocols):
            r.update(selection=strategy, repetition=int(rep), l=int(ac.k), C1=cfg4.C1, gamma=cfg4.gamma, n_pos=int(np.sum(data.y[lab] == 1)))
            rows.append(r)
    return rows


def cmd_active(cfg: ExperimentConfig, dataset_path: str | Path, out_dir: str | Path) -> dict:
    sc, ac = cfg.semisup, cfg.active
    out_dir = Path(out_dir)
    t0 = time.time()
    recs = load_records(dataset_path)
    data = records_to_dataset(recs)
    rhos = np.array([record_density(r) for r in recs])
    tasks = [(data.X, data.y, rhos, cfg.seed, rep, sc, ac) for rep in range(ac.seeds)]
    rows = [r for chunk in _map(_active_task, tasks, cfg.jobs) for r in chunk]
    report = {
        "schema_version": REPORT_SCHEMA,
        "kind": "active",
        "config_hash": cfg.hash(),
        "rows": rows,
        "summary": {
            "by_selection": _aggregate(rows, ("selection",)),
            "by_selection_protocol": _aggregate(rows, ("selection", "protocol")),
        },
    }
    _write_report(out_dir, "active.json", report)
    _write_timing(out_dir, "active", time.time() - t0)
    return report


# -- reports -----------------------------------------------------------------

_CSV_FIELDS = ("source", "kind", "selection", "protocol", "l", "m", "repetition", "mean_accuracy", "first_group_accuracy")


def cmd_report(run_files, out_dir: str | Path) -> tuple[Path, Path]:
    """Flatten semisup/active run files into one CSV and a JSON summary."""
    run_files = [Path(p) for p in run_files]
    if not run_files:
        raise SchemaError("need at least one run file")
    runs = []
    for p in run_files:
        try:
            d = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"cannot read run file {p}: {exc}") from exc
        runs.append((p, d))
    versions = sorted({str(d.get("schema_version")) for _, d in runs})
    if len(versions) > 1 or versions[0] != str(REPORT_SCHEMA):
        raise SchemaError(f"run files have schema versions {versions}; this build reads version {REPORT_SCHEMA}")
    rows = []
    for p, d in runs:
        if d.get("kind") not in ("semisup", "active"):
            raise SchemaError(f"{p.name}: kind {d.get('kind')!r} has no per-repetition rows")
        for r in d["rows"]:
            rows.append({"source": p.name, "kind": d["kind"], "selection": r.get("selection", ""), **{k: r.get(k, "") for k in _CSV_FIELDS[3:]}})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=_CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    csv_path = out_dir / "report.csv"
    csv_path.write_text(buf.getvalue())
    summary = {
        "schema_version": REPORT_SCHEMA,
        "sources": [p.name for p, _ in runs],
        "rows": len(rows),
        "by_kind_selection_protocol_l_m": _aggregate(rows, ("kind", "selection", "protocol", "l", "m")),
    }
    json_path = _write_report(out_dir, "report_summary.json", summary)
    return csv_path, json_path
