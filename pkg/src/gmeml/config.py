"""Numerical tolerances shared by every module."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # inputs with a larger Hermiticity residual are rejected, smaller ones symmetrized
    hermitian: float = 1e-12
    eig_residual: float = 1e-10
    density: float = 1e-10
    psd: float = 1e-10
    bloch_roundtrip: float = 1e-10
    max_kron_dim: int = 64
    # SDP
    sdp_gap: float = 1e-6
    sdp_feas: float = 1e-8
    certificate: float = 1e-7
    label_threshold: float = 1e-6
    # SVM
    smo_tol: float = 1e-3


TOLERANCES = Tolerances()
