import numpy as np
import pytest

from augsysid.core import LtiSS, numerical_rank, observability_matrix


def random_lti(rng: np.random.Generator, nx: int, nu: int = 1, ny: int = 1, rho: float = 0.9,
               with_d: bool = True, K: bool = False) -> LtiSS:
    """Random observable LTI model with spectral radius ``rho``."""
    while True:
        A = rng.normal(size=(nx, nx))
        A *= rho / np.max(np.abs(np.linalg.eigvals(A)))
        B = rng.normal(size=(nx, nu))
        C = rng.normal(size=(ny, nx))
        D = rng.normal(size=(ny, nu)) if with_d else np.zeros((ny, nu))
        if numerical_rank(observability_matrix(A, C, nx)) == nx:
            break
    if not K:
        return LtiSS(A, B, C, D)
    # pick K so that A - K C is stable too
    for scale in (0.3, 0.1, 0.03, 0.0):
        Kmat = scale * rng.normal(size=(nx, ny))
        if np.max(np.abs(np.linalg.eigvals(A - Kmat @ C))) < 0.98:
            return LtiSS(A, B, C, D, K=Kmat)
    raise AssertionError("unreachable")


def scalar_ss(K=None) -> LtiSS:
    return LtiSS([[0.5]], [[1.0]], [[1.0]], [[0.0]], K=K)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    def _report(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
