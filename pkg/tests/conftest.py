import numpy as np
import pytest

from gmeml import states


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_states(seed: int, n: int, kind: str = "ginibre"):
    out = []
    for i in range(n):
        r = np.random.default_rng([seed, i])
        out.append(states.random_density(r, states.GeneratorSpec(kind)))
    return out


def explicit_partial_transpose(rho, party: int):
    """Index-loop partial transpose, independent of the reshape-based version."""
    out = np.zeros_like(rho)
    for i in range(8):
        for j in range(8):
            bi = [(i >> (2 - q)) & 1 for q in range(3)]
            bj = [(j >> (2 - q)) & 1 for q in range(3)]
            bi[party], bj[party] = bj[party], bi[party]
            ii = bi[0] * 4 + bi[1] * 2 + bi[2]
            jj = bj[0] * 4 + bj[1] * 2 + bj[2]
            out[ii, jj] = rho[i, j]
    return out


# acceptance criteria outcomes, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
