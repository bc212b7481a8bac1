import os

import numpy as np
import pytest

os.environ.setdefault("STOCH_SQP_THREADS", "1")


def random_kkt(rng, n, m, spd=True):
    """Well-conditioned random KKT pieces: SPD (or identity) H and full-row-rank J."""
    if spd:
        B = rng.standard_normal((n, n))
        H = B @ B.T / n + np.eye(n)
    else:
        H = np.eye(n)
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    V, _ = np.linalg.qr(rng.standard_normal((m, m)))
    S = np.zeros((m, n))
    S[np.arange(m), np.arange(m)] = rng.uniform(0.5, 2.0, m)
    J = V @ S @ U.T
    return H, J


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" in report.nodeid and report.when == "call":
        _ACCEPTANCE[report.nodeid.split("::")[-1]] = report.outcome
    elif "test_acceptance.py::test_criterion_" in report.nodeid and report.failed:
        _ACCEPTANCE[report.nodeid.split("::")[-1]] = "failed"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda s: int(s.split("_")[2])):
        verdict = "PASS" if _ACCEPTANCE[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
