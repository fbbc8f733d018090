import numpy as np
import pytest

from lsmrkit import backerr


@pytest.fixture(autouse=True)
def _oracle_self_check(monkeypatch):
    monkeypatch.setattr(backerr, "SELF_CHECK", True)


def random_problem(seed, m, n, cond=10.0, rank=None, consistent=False):
    from lsmrkit.problems import make_problem
    p = make_problem(seed, m, n, cond=cond, rank=rank, consistent=consistent)
    return p.A, p.b


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(results):
        terminalreporter.write_line(results[cid])
