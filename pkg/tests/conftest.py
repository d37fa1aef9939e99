import sys
from importlib import resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from swarmcsp.lang import parse  # noqa: E402

ACCEPTANCE: dict[int, str] = {}


def corpus_text(name: str) -> str:
    return resources.files("swarmcsp.corpus").joinpath(f"{name}.swarm").read_text("utf-8")


@pytest.fixture(scope="session")
def faulty():
    return parse(corpus_text("faulty"))


@pytest.fixture(scope="session")
def corrected():
    return parse(corpus_text("corrected"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture(scope="session")
def corrected_for():
    """Corrected design for a given swarm size, obtained by refactoring."""
    from swarmcsp.analysis import locked, with_k
    from swarmcsp.refactor import refactor_design

    cache = {}

    def build(k: int):
        if k not in cache:
            faulty_k = with_k(parse(corpus_text("faulty")), k)
            cache[k] = refactor_design(faulty_k, locked(faulty_k, 12))[0]
        return cache[k]

    return build
