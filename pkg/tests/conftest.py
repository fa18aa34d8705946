import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def graph():
    from intentcache.lexicon import load_lexical_graph

    return load_lexical_graph()


@pytest.fixture(scope="session")
def trained_engine():
    """Engine on the bundled sample, trained once for the whole session."""
    from intentcache.config import RunConfig
    from intentcache.pipeline import Engine

    engine = Engine(RunConfig())
    engine.train()
    return engine


@pytest.fixture(scope="session")
def blobs():
    from importlib import resources

    text = resources.files("intentcache").joinpath("data", "blobs3.tsv").read_text()
    rows = [line.split("\t") for line in text.splitlines() if line and not line.startswith("#")]
    return np.array([[float(r[0]), float(r[1])] for r in rows]), np.array([int(r[2]) for r in rows])


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
