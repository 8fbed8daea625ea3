import numpy as np
import pytest

from gmeml import gmn, states
from gmeml.sdp import SolverConfig
from gmeml.states import BIPARTITIONS

from conftest import random_states


@pytest.mark.parametrize("name", ["product_000", "max_mixed"])
def test_separable_fiducials_are_zero(name):
    res = gmn.renormalized_gmn(states.fiducial(name))
    assert res.status == "optimal"
    assert res.value <= 1e-6


def test_ghz_value():
    res = gmn.renormalized_gmn(states.fiducial("ghz"))
    assert res.value == pytest.approx(states.pure_gmn_oracle(states.GHZ_KET), abs=1e-4)
    assert res.value == pytest.approx(0.5, abs=1e-4)


def test_w_value_matches_pure_oracle():
    res = gmn.renormalized_gmn(states.fiducial("w"))
    assert res.value == pytest.approx(np.sqrt(2) / 3, abs=1e-4)


def test_certificates_verify_and_bound():
    for kind in ("ginibre", "biseparable_mix", "ghz_noise"):
        for rho in random_states(21, 6, kind):
            res = gmn.renormalized_gmn(rho)
            assert res.status == "optimal"
            assert gmn.verify_certificate(res.certificate, rho, 1e-7)
            assert res.duality_gap <= 1e-6
            assert 0.0 <= res.value <= gmn.min_negativity(rho) + 1e-5


def test_biseparable_states_are_labeled_positive():
    for rho in random_states(22, 5, "biseparable_mix") + random_states(23, 3, "product"):
        label, res = gmn.label_state(rho)
        assert label == 1


def test_low_rank_ginibre_is_gme():
    rho = states.random_density(np.random.default_rng(5), states.GeneratorSpec("ginibre", rank=1))
    label, res = gmn.label_state(rho)
    assert label == -1
    assert res.rank == 1


def test_pure_states_match_oracle():
    for i in range(8):
        psi = states.ginibre_density(np.random.default_rng([31, i]), 8, 1)
        w, v = np.linalg.eigh(psi)
        ket = v[:, -1]
        assert gmn.renormalized_gmn(psi).value == pytest.approx(states.pure_gmn_oracle(ket), abs=1e-4)


def test_convexity_and_local_unitary_invariance():
    rhos = random_states(41, 6)
    vals = [gmn.renormalized_gmn(r).value for r in rhos]
    for i in range(0, 6, 2):
        mix = 0.5 * (rhos[i] + rhos[i + 1])
        assert gmn.renormalized_gmn(mix).value <= 0.5 * (vals[i] + vals[i + 1]) + 1e-5
    u = states.random_local_unitary(np.random.default_rng(4))
    for r, v in zip(rhos[:3], vals[:3]):
        assert gmn.renormalized_gmn(u @ r @ u.conj().T).value == pytest.approx(v, abs=1e-5)


def test_verify_rejects_tampered_certificate():
    rho = states.fiducial("ghz")
    cert = gmn.renormalized_gmn(rho).certificate
    bad = gmn.WitnessCertificate(cert.W.copy(), dict(cert.P), dict(cert.Q), cert.objective)
    a = BIPARTITIONS[1]
    bad.Q[a] = cert.Q[a] + 0.5 * np.eye(8)  # breaks Q <= 1 and the decomposition
    assert not gmn.verify_certificate(bad, rho)
    shifted = gmn.WitnessCertificate(cert.W, cert.P, cert.Q, cert.objective + 1e-3)
    assert not gmn.verify_certificate(shifted, rho)


def test_witness_is_nonnegative_on_biseparable_states():
    cert = gmn.renormalized_gmn(states.fiducial("ghz")).certificate
    for sigma in random_states(51, 10, "biseparable_mix"):
        assert np.trace(cert.W @ sigma).real >= -1e-7


def test_sdp_structure():
    g = gmn.build_gmn_sdp(states.fiducial("max_mixed"))
    assert g.rank == 8
    assert g.problem.block_dims == [16] * 9
    assert g.problem.n_constraints == 3 * 64 + 2 * 64
    g1 = gmn.build_gmn_sdp(states.fiducial("ghz"))
    assert g1.rank == 1
    assert g1.problem.block_dims[0] == 2


def test_label_state_raises_on_nonconvergence():
    with pytest.raises(gmn.GmnSolverError):
        gmn.label_state(states.fiducial("w"), cfg=SolverConfig(max_iters=2))


def test_invalid_input_rejected():
    with pytest.raises(states.InvalidStateError):
        gmn.renormalized_gmn(np.eye(8))
