import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmeml import svm


def blobs(rng, n=40, d=2, sep=4.0):
    X = np.vstack([rng.normal(size=(n // 2, d)) + sep / 2, rng.normal(size=(n // 2, d)) - sep / 2])
    y = np.r_[np.ones(n // 2, int), -np.ones(n // 2, int)]
    return svm.Dataset(X, y)


def overlapping(rng, n=60, d=3):
    return blobs(rng, n, d, sep=1.5)


# -- kernel ------------------------------------------------------------------


def test_rbf_examples():
    x = np.array([0.3, -1.0])
    assert svm.rbf_kernel(x, x, 0.7) == 1.0
    assert svm.rbf_kernel([0.0, 0.0], [1.0, 0.0], 1.0) == pytest.approx(np.exp(-1.0))
    assert svm.rbf_kernel([1.0, 2.0], [0.5, 0.0], 0.3) == svm.rbf_kernel([0.5, 0.0], [1.0, 2.0], 0.3)


def test_rbf_errors():
    with pytest.raises(svm.SvmError):
        svm.rbf_kernel([1.0], [1.0, 2.0], 1.0)
    with pytest.raises(svm.SvmError):
        svm.rbf_kernel([1.0], [1.0], 0.0)


def test_gram_is_psd(rng):
    X = rng.normal(size=(5, 4))
    K = svm.kernel_matrix(X, X, 0.5)
    assert np.linalg.eigvalsh(K)[0] >= -1e-12
    assert np.allclose(K, [[svm.rbf_kernel(a, b, 0.5) for b in X] for a in X], atol=1e-14)


# -- training ----------------------------------------------------------------


def test_symmetric_pair():
    data = svm.Dataset(np.array([[1.0], [-1.0]]), np.array([1, -1]))
    m = svm.train(data, 10.0, 1.0)
    assert sorted(m.support.tolist()) == [0, 1]
    assert np.array_equal(m.predict(data.X), data.y)
    assert m.b == pytest.approx(0.0, abs=1e-12)
    assert m.decision_function(np.array([[0.0]]))[0] == pytest.approx(0.0, abs=1e-8)


def test_xor():
    X = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
    y = np.array([1, 1, -1, -1])
    m = svm.train(svm.Dataset(X, y), 10.0, 1.0)
    assert np.array_equal(m.predict(X), y)
    best, _ = svm.exhaustive_dual(X, y, 10.0, 1.0)
    a = np.zeros(4)
    a[m.support] = np.abs(m.dual_coef)
    assert svm.dual_objective(a, X, y, 1.0) == pytest.approx(best, abs=1e-3)


def test_single_class_rejected():
    with pytest.raises(svm.SvmError):
        svm.train(svm.Dataset(np.zeros((3, 2)), np.ones(3, int)), 1.0, 1.0)


def test_dataset_validation():
    with pytest.raises(svm.SvmError):
        svm.Dataset(np.zeros((2, 2)), np.array([1, 0]))
    with pytest.raises(svm.SvmError):
        svm.Dataset(np.array([[np.inf, 0.0]]), np.array([1]))
    with pytest.raises(svm.SvmError):
        svm.Dataset(np.zeros((2, 2)), np.array([1]))


def test_exhaustive_oracle_on_small_instances():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        X = rng.normal(size=(n, 2))
        y = rng.choice([-1, 1], n)
        y[0], y[1] = 1, -1
        C, g = float(rng.uniform(0.1, 5.0)), float(rng.uniform(0.1, 2.0))
        m = svm.train(svm.Dataset(X, y), C, g, 1e-3)
        a = np.zeros(n)
        a[m.support] = np.abs(m.dual_coef)
        best, _ = svm.exhaustive_dual(X, y, C, g)
        assert svm.dual_objective(a, X, y, g) == pytest.approx(best, abs=1e-2)


def test_kkt_and_equality(rng):
    data = overlapping(rng)
    m = svm.train(data, 5.0, 0.5)
    rep = svm.kkt_audit(m, data, 1e-3)
    assert rep.passed, rep
    assert rep.equality_residual <= 1e-8


def test_free_support_vectors_sit_on_the_margin(rng):
    data = overlapping(rng)
    m = svm.train(data, 5.0, 0.5, 1e-6)
    free = np.abs(m.dual_coef) < 5.0 - 1e-9
    yf = data.y[m.support[free]] * m.decision_function(m.support_vectors[free])
    assert np.allclose(yf, 1.0, atol=1e-5)


def test_decision_value_against_direct_sum(rng):
    data = overlapping(rng)
    m = svm.train(data, 2.0, 0.3)
    x = rng.normal(size=3)
    direct = sum(c * svm.rbf_kernel(sv, x, 0.3) for c, sv in zip(m.dual_coef, m.support_vectors)) + m.b
    assert svm.decision_value(m, x) == pytest.approx(direct, abs=1e-12)
    with pytest.raises(svm.SvmError):
        svm.decision_value(m, np.zeros(4))


def test_tie_predicts_positive():
    m = svm.SvmModel(np.array([], int), np.zeros((0, 1)), np.array([]), 0.0, 1.0, 1.0, np.ones(1, bool))
    assert m.predict(np.array([[3.0]]))[0] == 1


def test_duplicated_samples_match_doubled_c(rng):
    # duplicating every point splits each multiplier in two, i.e. doubles the box
    data = overlapping(rng, 30)
    dup = svm.Dataset(np.vstack([data.X, data.X]), np.r_[data.y, data.y])
    probe = rng.normal(size=(10, 3))
    f_dup = svm.train(dup, 1.0, 0.5, 1e-9).decision_function(probe)
    f_ref = svm.train(data, 2.0, 0.5, 1e-9).decision_function(probe)
    assert np.allclose(f_dup, f_ref, atol=1e-6)


def test_permutation_invariance(rng):
    data = overlapping(rng)
    perm = rng.permutation(len(data))
    probe = rng.normal(size=(10, 3))
    f1 = svm.train(data, 3.0, 0.4, 1e-10).decision_function(probe)
    f2 = svm.train(data.subset(perm), 3.0, 0.4, 1e-10).decision_function(probe)
    assert np.allclose(f1, f2, atol=1e-8)


def test_constant_feature_invariance(rng):
    data = overlapping(rng)
    aug = svm.Dataset(np.hstack([data.X, np.full((len(data), 1), 7.0)]), data.y)
    probe = rng.normal(size=(10, 3))
    f1 = svm.train(data, 3.0, 0.4, 1e-10).decision_function(probe)
    f2 = svm.train(aug, 3.0, 0.4, 1e-10).decision_function(np.hstack([probe, np.full((10, 1), 7.0)]))
    assert np.allclose(f1, f2, atol=1e-7)


def test_feature_mask_restricts_kernel(rng):
    data = overlapping(rng)
    mask = np.array([True, False, True])
    m = svm.train(data, 1.0, 0.5, feature_mask=mask)
    ref = svm.train(svm.Dataset(data.X[:, mask], data.y), 1.0, 0.5)
    assert np.allclose(m.decision_function(data.X), ref.decision_function(data.X[:, mask]))


def test_linear_kernel_separates(rng):
    data = blobs(rng)
    m = svm.train(data, 1.0, 1.0, kernel="linear")
    assert np.mean(m.predict(data.X) == data.y) == 1.0


def test_per_sample_bounds(rng):
    data = overlapping(rng)
    C = np.where(np.arange(len(data)) < 10, 100.0, 0.05)
    res = svm.smo(data.X, data.y, C, 0.5)
    assert np.all(res.alpha <= C + 1e-15)
    assert abs(res.alpha @ data.y) <= 1e-8


def test_numba_and_numpy_paths_agree(rng):
    data = overlapping(rng, 80)
    X, y = data.X, data.y
    C = np.full(len(y), 2.0)
    a1, g1, it1, _ = svm._smo_np(X, y, C, 0.5, False, 1e-3, 10**6, 4)
    if not svm._accel.HAVE_NUMBA:
        pytest.skip("numba not installed")
    a2, g2, it2, _ = svm._smo_nb(X, y, C, 0.5, False, 1e-3, 10**6, np.empty((4, len(y))), np.full(len(y), -1), np.full(4, -1))
    assert it1 == it2
    assert np.allclose(a1, a2, atol=1e-12)


def test_small_cache_gives_same_model(rng):
    data = overlapping(rng, 80)
    r1 = svm.smo(data.X, data.y, 2.0, 0.5, cache_mb=1e-6)
    r2 = svm.smo(data.X, data.y, 2.0, 0.5, K=svm.kernel_matrix(data.X, data.X, 0.5))
    assert np.allclose(r1.alpha, r2.alpha, atol=1e-10)


def test_model_json_roundtrip(rng):
    data = overlapping(rng)
    m = svm.train(data, 2.0, 0.3, feature_mask=np.array([True, True, False]))
    m2 = svm.SvmModel.loads(m.dumps())
    assert np.array_equal(m.decision_function(data.X), m2.decision_function(data.X))
    bad = m.to_dict()
    bad["schema_version"] = 99
    with pytest.raises(svm.SvmError):
        svm.SvmModel.from_dict(bad)


def test_w_norm_matches_dual(rng):
    data = overlapping(rng)
    res = svm.smo(data.X, data.y, 1.0, 0.5)
    m = svm.train(data, 1.0, 0.5)
    assert m.w_norm_sq() == pytest.approx(res.alpha @ (res.gradient + 1.0), rel=1e-10)


# -- model selection ---------------------------------------------------------


def test_stratified_folds(rng):
    y = np.r_[np.ones(23, int), -np.ones(17, int)]
    folds = svm.stratified_folds(y, 5, rng)
    allidx = np.sort(np.concatenate(folds))
    assert np.array_equal(allidx, np.arange(40))
    for f in folds:
        assert 4 <= np.sum(y[f] == 1) <= 5
    with pytest.raises(svm.SvmError):
        svm.stratified_folds(np.r_[np.ones(3, int), -np.ones(10, int)], 5, rng)


def test_cv_on_separable_blobs(rng):
    cfg = svm.TrainConfig(C_grid=(0.1, 10.0), gamma_grid=(0.1, 1.0))
    res = svm.cross_validate(blobs(rng, 60, sep=8.0), cfg, np.random.default_rng(0))
    assert res.table.shape == (2, 2)
    assert res.table.max() == 1.0
    assert res.accuracy == 1.0


def test_cv_single_cell(rng):
    cfg = svm.TrainConfig(C_grid=(2.0,), gamma_grid=(0.3,))
    res = svm.cross_validate(overlapping(rng), cfg, np.random.default_rng(0))
    assert (res.C, res.gamma) == (2.0, 0.3)


def test_cv_is_deterministic(rng):
    data = overlapping(rng)
    cfg = svm.TrainConfig(C_grid=(1.0, 10.0), gamma_grid=(0.1, 1.0))
    a = svm.cross_validate(data, cfg, np.random.default_rng(5))
    b = svm.cross_validate(data, cfg, np.random.default_rng(5))
    assert np.array_equal(a.table, b.table)


def test_permutation_null():
    accs = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        data = overlapping(rng, 120)
        shuffled = svm.Dataset(data.X, rng.permutation(data.y))
        cfg = svm.TrainConfig(C_grid=(1.0,), gamma_grid=(0.5,))
        accs.append(svm.cross_validate(shuffled, cfg, rng).accuracy)
    assert np.mean(accs) == pytest.approx(0.5, abs=0.05)


def test_config_validation():
    with pytest.raises(svm.SvmError):
        svm.TrainConfig(C_grid=())
    with pytest.raises(svm.SvmError):
        svm.TrainConfig(folds=1)
    with pytest.raises(svm.SvmError):
        svm.TrainConfig(kernel="poly")


# -- screening ---------------------------------------------------------------


def test_screening_drops_noise_feature():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        data = blobs(rng, 80, 2, sep=3.0)
        noisy = svm.Dataset(np.hstack([data.X, 6.0 * rng.normal(size=(80, 1))]), data.y)
        cfg = svm.TrainConfig(folds=4)
        res = svm.screen_features(noisy, cfg, 1.0, 0.5, rng, min_gain=0.001)
        assert not res.mask[2]
        assert 2 in res.dropped
        assert res.accuracy_after >= res.accuracy_before


def test_identity_feature_is_never_dropped_for_gain(rng):
    data = overlapping(rng)
    X = np.hstack([np.ones((len(data), 1)), data.X])
    res = svm.screen_features(svm.Dataset(X, data.y), svm.TrainConfig(folds=3), 1.0, 0.5, rng)
    assert res.gains[0] == pytest.approx(0.0, abs=1e-12)


def test_feature_curve(rng):
    data = overlapping(rng, 80)
    test = overlapping(np.random.default_rng(99), 80)
    cfg = svm.TrainConfig()
    curve = svm.accuracy_vs_feature_count(data, test, [2, 1], 1.0, 0.5, [0, 0], cfg=cfg)
    full = np.mean(svm.train(data, 1.0, 0.5).predict(test.X) == test.y)
    assert curve.counts.tolist() == [3, 2, 1]
    assert curve.mean[0] == pytest.approx(full)
    assert np.all(curve.std == 0.0)
    with pytest.raises(svm.SvmError):
        svm.accuracy_vs_feature_count(data, test, [2], 1.0, 0.5, [0], cfg=cfg)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_kkt_holds_on_random_problems(seed):
    rng = np.random.default_rng(seed)
    data = overlapping(rng, 40)
    C = float(10 ** rng.uniform(-1, 2))
    g = float(10 ** rng.uniform(-1, 0.5))
    m = svm.train(data, C, g)
    assert svm.kkt_audit(m, data, 1e-3).passed


def test_disable_flag_selects_numpy_path_with_same_result():
    import os
    import subprocess
    import sys

    code = (
        "import numpy as np; from gmeml import _accel, svm;"
        "r=np.random.default_rng(0); X=r.normal(size=(60,3)); y=np.where(X[:,0]>0,1,-1);"
        "print(_accel.USE_NUMBA, repr(float(svm.smo(X,y,1.0,0.5,1e-10).alpha.sum())))"
    )
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, GMEML_DISABLE_NUMBA=flag)
        out[flag] = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.split()
    assert out["1"][0] == "False"
    assert out["0"][0] == str(svm._accel.HAVE_NUMBA)
    assert float(out["1"][1]) == pytest.approx(float(out["0"][1]), abs=1e-7)
