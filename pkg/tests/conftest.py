import time

import numpy as np
import pytest

from resetgraph.linsys import StateSpace, TransferFunction


def first_order():
    return TransferFunction((1.0,), (1.0, 1.0)).to_ss()


def example_bls():
    G = TransferFunction((0.055,), (1.0, 1.0, 1.0)).to_ss()
    return StateSpace(G.A, G.B, G.C, [[0.1]])


def example_plant():
    return TransferFunction((1.0,), (1.0, 0.2, 0.0)).to_ss()


EXAMPLE_LAMBDAS = np.round(np.arange(-100, 101) / 100, 2)


@pytest.fixture(scope="session")
def fo():
    return first_order()


@pytest.fixture(scope="session")
def bls():
    return example_bls()


@pytest.fixture(scope="session")
def plant():
    return example_plant()


@pytest.fixture(scope="session")
def bls_patch():
    from resetgraph.sgregions import patch_overapprox

    return patch_overapprox(example_bls(), EXAMPLE_LAMBDAS)


@pytest.fixture(scope="session")
def example_run():
    """(report, certificate, seconds) of one full example reproduction."""
    from resetgraph.example import reproduce

    t0 = time.perf_counter()
    report, cert = reproduce(seed=0)
    return report, cert, time.perf_counter() - t0


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one pass/fail line; call as ``criterion(n, ok, detail)``."""
    def record(n, ok, detail=""):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append((n, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA, key=lambda x: x[0]):
            terminalreporter.write_line(line)
