"""Shared fixtures and dense reference implementations used as oracles."""

import numpy as np
import pytest

from nnfidelity.quantum import DensityMatrix, StateVector


def random_pure(n, rng):
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return StateVector(v / np.linalg.norm(v))


def random_mixed(n, rng, rank=None):
    d = 1 << n
    rank = rank or d
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    rho = (rho + rho.conj().T) / 2
    return DensityMatrix(rho / np.trace(rho).real)


def dense_expectation(state, pauli):
    """tr(rho P) with the full Kronecker matrix."""
    P = pauli.matrix()
    if isinstance(state, StateVector):
        return float(np.vdot(state.amp, P @ state.amp).real)
    return float(np.trace(state.mat @ P).real)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    def report(criterion: str, ok: bool, detail: str) -> None:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
