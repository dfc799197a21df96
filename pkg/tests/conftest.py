import numpy as np
import pytest

from optransport import models, verification
from optransport.spectral import Grid

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture(scope="session")
def atomic_weak():
    fam = models.build_atomic_pair(models.AtomicPairParams.weak())
    return fam, verification.model_context(fam, Grid.uniform(2001))


@pytest.fixture(scope="session")
def atomic_strong():
    fam = models.build_atomic_pair(models.AtomicPairParams.strong())
    return fam, verification.model_context(fam, Grid.uniform(2001))


@pytest.fixture(scope="session")
def chain_weak():
    fam = models.build_spin_chain(models.SpinChainParams.weak())
    return fam, verification.model_context(fam, Grid.uniform(2001))
