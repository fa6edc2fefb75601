import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from regvi.mdp import GridWorldConfig, build_gridworld, build_random_mdp  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def gridworld():
    return build_gridworld(GridWorldConfig())


@pytest.fixture(scope="session")
def small_mdps():
    return [build_random_mdp(4, 3, seed, discount=0.9) for seed in range(5)]


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record an acceptance outcome: ``acceptance(criterion, ok, detail)``."""
    store = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(criterion: int, ok: bool, detail: str) -> bool:
        store.setdefault(criterion, []).append((bool(ok), detail))
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(store):
        parts = store[criterion]
        ok = all(p[0] for p in parts)
        detail = "; ".join(p[1] for p in parts)
        terminalreporter.write_line(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
