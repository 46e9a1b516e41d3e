import pytest

from tspkit.data import default_registry, generate_synthetic, toy_registry
from tspkit.drd import toy_training_set


@pytest.fixture(scope="session")
def registry():
    return default_registry()


@pytest.fixture(scope="session")
def toy_reg():
    return toy_registry()


@pytest.fixture(scope="session")
def toy_set():
    """The 8-image 64x64 4-class set used for toy training."""
    return toy_training_set(seed=0)


@pytest.fixture(scope="session")
def synthetic_split(registry):
    return generate_synthetic(7, 20, 96, 64, registry, 6.5)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL/SKIP line per acceptance criterion."""
    from test_acceptance import CRITERIA

    outcomes = {}
    for key, label in (("passed", "PASS"), ("failed", "FAIL"), ("skipped", "SKIP")):
        for rep in terminalreporter.stats.get(key, []):
            name = rep.nodeid.rsplit("::", 1)[-1]
            if "test_acceptance.py" in rep.nodeid and name.startswith("test_criterion_"):
                num = int(name.split("_")[2])
                if outcomes.get(num) != "FAIL":
                    outcomes[num] = label
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(outcomes):
        terminalreporter.write_line(f"criterion {num:2d}: {outcomes[num]}  {CRITERIA[num]}")
