from __future__ import annotations

import pytest

from aor.ontology import reference_kb
from aor.study import load_graphs
from aor.synth import synth_fixtures


@pytest.fixture(scope="session")
def ref_kb():
    return reference_kb()


@pytest.fixture(scope="session")
def world():
    return synth_fixtures(seed=7, n_studies=100, questions_per_study=3)


@pytest.fixture(scope="session")
def world_graphs(world):
    return load_graphs(world.annotations, world.kb)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
