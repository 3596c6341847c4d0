import time

import numpy as np
import pytest

from npdf.mean_field import AtomModel
from npdf.nopair_scf import ScfConfig, scf_solve
from npdf.radial_dirac import AtomParams, build_grid, default_r_max

_ACCEPTANCE: dict[int, str] = {}
ACCEPTANCE_TITLES = {
    1: "hydrogenic spectrum",
    2: "constant-d inequality",
    3: "form inequalities",
    4: "mean-field bounds",
    5: "projector perturbation",
    6: "Q-negativity",
    7: "SCF correctness q=1",
    8: "SCF helium-like",
    9: "reduction lemmas",
    10: "gap accumulation",
    11: "sea-pair consistency",
    12: "determinism and persistence",
}


@pytest.fixture
def acceptance():
    """Recorder for one pass/fail line per acceptance criterion."""

    def record(num: int, passed: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {num:2d} {ACCEPTANCE_TITLES[num]}: {detail}"
        _ACCEPTANCE[num] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    seen = any("test_acceptance" in getattr(r, "nodeid", "")
               for reports in terminalreporter.stats.values() for r in reports)
    if not seen and not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title in ACCEPTANCE_TITLES.items():
        terminalreporter.write_line(_ACCEPTANCE.get(num, f"[FAIL] {num:2d} {title}: did not complete"))


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(96, 1e-3, 1e4)


@pytest.fixture(scope="session")
def small_model(small_grid):
    return AtomModel(small_grid, AtomParams(Z=2, q=2))


@pytest.fixture(scope="session")
def hydrogen_model():
    return AtomModel(build_grid(300, 1e-3, default_r_max(1)), AtomParams(Z=1, q=1))


@pytest.fixture(scope="session")
def helium_model():
    return AtomModel(build_grid(300, 1e-3, default_r_max(2)), AtomParams(Z=2, q=2))


@pytest.fixture(scope="session")
def helium_run(helium_model):
    """Helium-like SCF from the bare nucleus at theta = 0.3; (report, seconds)."""
    t0 = time.perf_counter()
    rep = scf_solve(helium_model, q=2, config=ScfConfig(damping=0.3, max_iter=60, residual_tol=1e-9))
    return rep, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
