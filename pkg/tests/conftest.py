import numpy as np
import pytest

from vallois.embedding import build_psi, build_reversed_psi
from vallois.marginal import Bimodal, DeltaMu, Gaussian, SymExp
from vallois.two_marginal import build_psi2


@pytest.fixture(scope="session")
def sym_exp():
    return SymExp()


@pytest.fixture(scope="session")
def bimodal():
    return Bimodal()


@pytest.fixture(scope="session")
def gauss1():
    return Gaussian()


@pytest.fixture(scope="session")
def sym_map(sym_exp):
    return build_psi(sym_exp)


@pytest.fixture(scope="session")
def sym_reversed(sym_exp):
    return build_reversed_psi(sym_exp)


@pytest.fixture(scope="session")
def pair(sym_exp, bimodal):
    return DeltaMu(sym_exp, bimodal)


@pytest.fixture(scope="session")
def two(pair):
    return build_psi2(pair)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --- acceptance report -----------------------------------------------------------

_CRITERIA = {
    1: "sequential stops at the reference settings",
    2: "embedding identities",
    3: "duality",
    4: "pathwise super-replication",
    5: "sub/super ordering",
    6: "two-marginal construction",
    7: "fake Brownian motion",
    8: "headless property suites",
}
_RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def record():
    """record(criterion, name, ok, detail) stores one check for the summary."""
    def _record(n, name, ok, detail=""):
        _RESULTS.setdefault(n, []).append((name, bool(ok), detail))
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in _CRITERIA.items():
        checks = _RESULTS.get(n)
        if not checks:
            tr.write_line(f"CRITERION {n}: NOT RUN ({title}; deselected)")
            continue
        verdict = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        parts = "; ".join(f"{name} {'ok' if ok else 'FAILED'} [{d}]" for name, ok, d in checks)
        tr.write_line(f"CRITERION {n}: {verdict} ({title}) {parts}")
