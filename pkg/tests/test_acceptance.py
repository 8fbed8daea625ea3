"""Acceptance criteria 1-11.

Each test prints one ``criterion N: PASS|FAIL`` line; the lines are repeated
in the terminal summary.

The labeled corpus (5,500 states per class) is cached under ``.acceptance/``
and rebuilt when missing or when its config hash changes.  The
semi-supervised and active-learning experiments keep the full problem shape
(l, u, m, repetitions) but use fewer annealing restarts by default; set
``GMEML_ACCEPTANCE_SCALE=full`` for the library defaults.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from gmeml import gmn, pipeline, s4vm, states, svm
from conftest import record_criterion

ROOT = Path(__file__).resolve().parents[1]
WORK = Path(os.environ.get("GMEML_ACCEPTANCE_DIR", ROOT / ".acceptance"))
FULL = os.environ.get("GMEML_ACCEPTANCE_SCALE", "reduced") == "full"
SEED = 2026

CORPUS = {"seed": SEED, "audit_fraction": 0.01, "generate": {"quota_pos": 5500, "quota_neg": 5500}}

SUPERVISED = {
    "test_fraction": 0.2,
    "C_grid": [10.0, 100.0, 1000.0],
    "gamma_grid": [0.01, 0.0316, 0.1],
    "folds": 5,
    "cv_subsample": 2000,
    "screen_subsample": 2000,
    "screen_folds": 3,
    "screen_max_rounds": 5,
    "seeds": 5,
    "curve_counts": [64, 56, 48, 40, 32],
    "curve_repetitions": 2,
    "curve_subsample": 2000,
}

SEMISUP = {
    "l_values": [40, 60, 80],
    "u": 2000,
    "m_values": [2, 4, 8, 16],
    "repetitions": 6,
    **({} if FULL else {"restarts": 6, "anneal_rounds": 6}),
}

ACTIVE = {"pool_size": 2000, "k": 60, "seeds": 6, "m_values": [8]}


def experiment(**sections):
    return pipeline.ExperimentConfig.from_dict({"seed": SEED, "audit_fraction": 0.01, "generate": CORPUS["generate"], **sections})


# -- shared artifacts --------------------------------------------------------


@pytest.fixture(scope="session")
def corpus():
    out = WORK / "corpus"
    cfg = pipeline.ExperimentConfig.from_dict(CORPUS)
    path, stats = out / "dataset.jsonl", out / "generate_stats.json"
    fresh = not (path.exists() and stats.exists() and json.loads(stats.read_text())["config_hash"] == cfg.hash())
    if fresh:
        pipeline.cmd_generate(cfg, out)
    recs = pipeline.load_records(path)
    audit = pipeline.audit_dataset(recs, cfg.audit_fraction, cfg.seed)
    assert audit.passed, f"corpus audit mismatches: {audit.mismatches}"
    labeling_seconds = json.loads((out / "timing.json").read_text())["generate"]
    return path, recs, labeling_seconds


@pytest.fixture(scope="session")
def supervised_run(corpus, tmp_path_factory):
    path, _, labeling = corpus
    out = tmp_path_factory.mktemp("supervised")
    t0 = time.time()
    rep = pipeline.cmd_supervised(experiment(supervised=SUPERVISED), path, out)
    return rep, labeling, time.time() - t0


@pytest.fixture(scope="session")
def semisup_run(corpus, tmp_path_factory):
    path = corpus[0]
    out = tmp_path_factory.mktemp("semisup")
    return pipeline.cmd_semisup(experiment(semisup=SEMISUP), path, out)


@pytest.fixture(scope="session")
def active_run(corpus, tmp_path_factory):
    path = corpus[0]
    out = tmp_path_factory.mktemp("active")
    return pipeline.cmd_active(experiment(semisup=SEMISUP, active=ACTIVE), path, out)


def by_rep(rows, protocol, key="mean_accuracy", **match):
    """Per-repetition mean of ``key`` over rows of one protocol."""
    reps = sorted({r["repetition"] for r in rows})
    out = []
    for rep in reps:
        sel = [r[key] for r in rows if r["protocol"] == protocol and r["repetition"] == rep and all(r[k] in v for k, v in match.items())]
        out.append(float(np.mean(sel)))
    return np.array(out)


# -- 1-3: GMN ----------------------------------------------------------------


def test_criterion_01_gmn_fixed_points():
    product = gmn.renormalized_gmn(states.fiducial("product_000")).value
    ghz = gmn.renormalized_gmn(states.fiducial("ghz")).value
    oracle = states.pure_gmn_oracle(states.GHZ_KET)
    mixed = gmn.renormalized_gmn(states.fiducial("max_mixed")).value
    ok = product <= 1e-6 and abs(ghz - 0.5) <= 1e-4 and abs(ghz - oracle) <= 1e-4 and mixed <= 1e-6
    record_criterion(1, ok, f"product {product:.2e}, GHZ {ghz:.7f} (oracle {oracle:.7f}), I/8 {mixed:.2e}")


def test_criterion_02_witness_audit():
    t0 = time.time()
    rhos = [states.random_density(np.random.default_rng([SEED, 2, i])) for i in range(1000)]
    optimal = verified = small_gap = 0
    for rho in rhos:
        res = gmn.renormalized_gmn(rho)
        if res.status != "optimal":
            continue
        optimal += 1
        verified += gmn.verify_certificate(res.certificate, rho, 1e-7)
        small_gap += res.duality_gap <= 1e-6
    minutes = (time.time() - t0) / 60.0
    ok = optimal > 0 and verified == optimal and small_gap >= 0.99 * optimal and minutes <= 5.0
    record_criterion(2, ok, f"{optimal}/1000 optimal, {verified} certificates verified at 1e-7, gap <= 1e-6 in {small_gap}, {minutes:.1f} min")


def test_criterion_03_gmn_properties():
    rhos = [states.random_density(np.random.default_rng([SEED, 3, i])) for i in range(500)]
    vals = np.array([gmn.renormalized_gmn(r).value for r in rhos])
    bounds = np.array([gmn.min_negativity(r) for r in rhos])
    bound_ok = bool(np.all(vals >= -1e-9) and np.all(vals <= bounds + 1e-5))

    rng = np.random.default_rng([SEED, 3, 1])
    convex_fail = 0
    for _ in range(100):
        i, j = rng.choice(500, 2, replace=False)
        t = rng.uniform()
        mix = t * rhos[i] + (1 - t) * rhos[j]
        convex_fail += gmn.renormalized_gmn(mix).value > t * vals[i] + (1 - t) * vals[j] + 1e-5

    lu_err = 0.0
    for i in range(100):
        u = states.random_local_unitary(np.random.default_rng([SEED, 3, 2, i]))
        lu_err = max(lu_err, abs(gmn.renormalized_gmn(u @ rhos[i] @ u.conj().T).value - vals[i]))

    pure_err = 0.0
    for i in range(200):
        ket = states.ginibre_density(np.random.default_rng([SEED, 3, 3, i]), 8, 1)
        psi = np.linalg.eigh(ket)[1][:, -1]
        pure_err = max(pure_err, abs(gmn.renormalized_gmn(np.outer(psi, psi.conj())).value - states.pure_gmn_oracle(psi)))

    ok = bound_ok and convex_fail == 0 and lu_err <= 1e-5 and pure_err <= 1e-4
    record_criterion(3, ok, f"bounds {'hold' if bound_ok else 'violated'}, convexity failures {convex_fail}/100, max LU deviation {lu_err:.1e}, max pure-state error {pure_err:.1e}")


# -- 4-5: SVM ----------------------------------------------------------------


def test_criterion_04_svm_correctness(corpus, supervised_run):
    _, recs, _ = corpus
    data = pipeline.records_to_dataset(recs)

    kkt_models = kkt_pass = 0
    for i in range(30):
        rng = np.random.default_rng([SEED, 4, i])
        idx = rng.choice(len(data), 300, replace=False)
        sub = data.subset(idx)
        C, g = float(10 ** rng.uniform(-1, 3)), float(10 ** rng.uniform(-2.5, -0.5))
        kkt_models += 1
        kkt_pass += svm.kkt_audit(svm.train(sub, C, g), sub, 1e-3).passed
    rep, _, _ = supervised_run
    kkt_models += len(rep["rows"])
    kkt_pass += sum(r["kkt_passed"] for r in rep["rows"])

    qp_err = 0.0
    for i in range(20):
        rng = np.random.default_rng([SEED, 4, 100, i])
        n = int(rng.integers(2, 7))
        X = rng.normal(size=(n, 3))
        y = rng.choice([-1, 1], n)
        y[:2] = [1, -1]
        C, g = float(rng.uniform(0.1, 10)), float(rng.uniform(0.05, 2))
        m = svm.train(svm.Dataset(X, y), C, g, 1e-3)
        a = np.zeros(n)
        a[m.support] = np.abs(m.dual_coef)
        best, _ = svm.exhaustive_dual(X, y, C, g)
        qp_err = max(qp_err, abs(svm.dual_objective(a, X, y, g) - best))

    null = []
    cfg = svm.TrainConfig(C_grid=(100.0,), gamma_grid=(0.0316,), folds=5)
    for i in range(10):
        rng = np.random.default_rng([SEED, 4, 200, i])
        sub = data.subset(rng.choice(len(data), 400, replace=False))
        null.append(svm.cross_validate(svm.Dataset(sub.X, rng.permutation(sub.y)), cfg, rng).accuracy)
    null_mean = float(np.mean(null))

    ok = kkt_pass == kkt_models and qp_err <= 1e-2 and abs(null_mean - 0.5) <= 0.05
    record_criterion(4, ok, f"KKT {kkt_pass}/{kkt_models} models, max dual gap to exhaustive QP {qp_err:.1e}, permutation-null CV {null_mean:.3f}")


def test_criterion_05_supervised_accuracy(supervised_run):
    rep, labeling, seconds = supervised_run
    s = rep["summary"]
    rows = rep["rows"]
    sizes_ok = all(r["train_size"] == 8800 and r["test_size"] == 2200 for r in rows)
    deltas = [r["delta_pp"] for r in rows]
    total_min = (labeling + seconds) / 60.0
    ok = (
        sizes_ok
        and s["accuracy_before_mean"] >= 0.80
        and min(deltas) >= -0.1
        and s["positive_delta_seeds"] > len(rows) / 2
        and total_min <= 60.0
    )
    record_criterion(
        5,
        ok,
        f"test accuracy {100 * s['accuracy_before_mean']:.2f}% -> {100 * s['accuracy_after_mean']:.2f}% after screening "
        f"(per-seed delta pp {', '.join(f'{d:+.2f}' for d in deltas)}; positive in {s['positive_delta_seeds']}/{len(rows)}), "
        f"best C={rep['best']['C']:g} gamma={rep['best']['gamma']:g}, {total_min:.1f} min incl. labeling",
    )


# -- 6-9: semi-supervised ------------------------------------------------------


def test_criterion_06_protocol_ordering(semisup_run):
    rows = semisup_run["rows"]
    mean = {p: float(np.mean([r["mean_accuracy"] for r in rows if r["protocol"] == p])) for p in pipeline.PROTOCOLS}
    ren = by_rep(rows, "renewal", m=(8, 16))
    rnd = by_rep(rows, "svm-s4vm", m=(8, 16))
    wins = int(np.sum(ren > rnd))
    ok = mean["renewal"] > mean["svm-s4vm"] > mean["s4vm"] and wins >= 4
    record_criterion(
        6,
        ok,
        f"means renewal {100 * mean['renewal']:.2f}% / svm-s4vm {100 * mean['svm-s4vm']:.2f}% / s4vm {100 * mean['s4vm']:.2f}%, "
        f"renewal > svm-s4vm at m in {{8,16}} in {wins}/{len(ren)} repetitions",
    )


def test_criterion_07_first_group(semisup_run):
    rows = semisup_run["rows"]
    ren = by_rep(rows, "renewal", "first_group_accuracy")
    rnd = by_rep(rows, "svm-s4vm", "first_group_accuracy")
    wins = int(np.sum(ren > rnd))
    ok = wins > len(ren) / 2
    record_criterion(7, ok, f"first-group accuracy renewal {100 * ren.mean():.2f}% vs random {100 * rnd.mean():.2f}%, renewal higher in {wins}/{len(ren)} repetitions")


def test_criterion_08_monotone_in_l(semisup_run):
    rows = semisup_run["rows"]
    parts, ok = [], True
    for p in pipeline.PROTOCOLS:
        per_l = {l: by_rep(rows, p, l=(l,)) for l in SEMISUP["l_values"]}
        pooled = float(np.sqrt(np.mean([v.var(ddof=1) for v in per_l.values()])))
        means = [per_l[l].mean() for l in SEMISUP["l_values"]]
        good = all(b >= a - pooled for a, b in zip(means, means[1:]))
        ok &= good
        parts.append(f"{p} " + "/".join(f"{100 * m:.2f}" for m in means) + f" (sd {100 * pooled:.2f})")
    record_criterion(8, ok, "mean accuracy at l=40/60/80: " + "; ".join(parts))


def test_criterion_09_active_learning(active_run):
    rows = active_run["rows"]
    act = [r["mean_accuracy"] for r in rows if r["selection"] == "active"]
    rnd = [r["mean_accuracy"] for r in rows if r["selection"] == "random"]
    balanced = all(r["n_pos"] == 30 for r in rows)
    ok = balanced and np.mean(act) >= np.mean(rnd)
    record_criterion(9, ok, f"l=60 over {ACTIVE['seeds']} seeds: trace-distance selection {100 * np.mean(act):.2f}% vs random {100 * np.mean(rnd):.2f}%")


# -- 10-11 -------------------------------------------------------------------


def test_criterion_10_safe_assign():
    import itertools

    mismatches = 0
    for i in range(20):
        rng = np.random.default_rng([SEED, 10, i])
        u, T = int(rng.integers(4, 13)), int(rng.integers(1, 6))
        cand = rng.choice([-1, 1], size=(T, u))
        base = rng.choice([-1, 1], size=u)
        res = s4vm.safe_assign(cand, base)
        base_agree = np.mean(cand == base, axis=1)
        best = max(float(np.min(np.mean(cand == np.array(y), axis=1) - base_agree)) for y in itertools.product((-1, 1), repeat=u))
        mismatches += abs(res.value - best) > 1e-12

    worst = np.inf
    for i in range(20):
        rng = np.random.default_rng([SEED, 10, 100, i])
        X = np.vstack([rng.normal(size=(60, 2)) + 1.0, rng.normal(size=(60, 2)) - 1.0])
        y = np.r_[np.ones(60, int), -np.ones(60, int)]
        lab = np.r_[rng.choice(60, 4, replace=False), 60 + rng.choice(60, 4, replace=False)]
        unl = np.setdiff1d(np.arange(120), lab)
        pred = s4vm.s4vm_predict(svm.Dataset(X[lab], y[lab]), X[unl], s4vm.S4vmConfig(T=4, restarts=6, anneal_rounds=4, C1=10.0, gamma=0.5, seed=i))
        worst = min(worst, pred.safe.value)
    ok = mismatches == 0 and worst >= -0.01
    record_criterion(10, ok, f"brute-force mismatches {mismatches}/20, worst minimax value over 20 synthetic S4VM runs {worst:+.4f}")


def test_criterion_11_determinism(tmp_path):
    cfg = pipeline.ExperimentConfig.from_dict(
        {
            "seed": 11,
            "generate": {"quota_pos": 60, "quota_neg": 60, "batch": 32},
            "semisup": {"l_values": [8], "u": 40, "m_values": [2, 4], "repetitions": 2, "restarts": 3, "anneal_rounds": 3},
            "active": {"pool_size": 40, "k": 8, "seeds": 2, "m_values": [2]},
        }
    )
    names = ("dataset.jsonl", "generate_stats.json", "semisup.json", "active.json", "report.csv", "report_summary.json")
    digests = []
    for run in ("a", "b"):
        out = tmp_path / run
        res = pipeline.cmd_generate(cfg, out)
        pipeline.cmd_semisup(cfg, res.path, out)
        pipeline.cmd_active(cfg, res.path, out)
        pipeline.cmd_report([out / "semisup.json", out / "active.json"], out)
        digests.append([(out / n).read_bytes() for n in names])
    same = [n for n, a, b in zip(names, *digests) if a == b]
    record_criterion(11, len(same) == len(names), f"{len(same)}/{len(names)} artifacts byte-identical across two runs")
