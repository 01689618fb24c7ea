import re
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kgloop.graph import build_graph  # noqa: E402
from kgloop.synthetic import compositional_kg  # noqa: E402


@pytest.fixture
def kg_from():
    """Build a graph from compact ``"h r t"`` strings."""

    def make(*specs, concepts=None, augment=True):
        triples = [tuple(s.split()) for s in specs]
        return build_graph(triples, concepts, augment_inverses=augment)

    return make


@pytest.fixture(scope="session")
def synthetic():
    return compositional_kg(seed=0)


@pytest.fixture(scope="session")
def synthetic_kg(synthetic):
    return build_graph(synthetic.train, synthetic.concepts)


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed", "skipped", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" not in nodeid or getattr(rep, "when", "call") not in ("call", "setup"):
                continue
            m = re.search(r"test_c(\d+)_(\w+)", nodeid)
            if m:
                rows.append((int(m.group(1)), m.group(2), outcome.upper()))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    seen = set()
    for num, name, outcome in sorted(rows):
        if (num, name) in seen:
            continue
        seen.add((num, name))
        label = {"PASSED": "PASS", "FAILED": "FAIL", "SKIPPED": "SKIP", "ERROR": "FAIL"}[outcome]
        terminalreporter.write_line(f"criterion {num:>2}: {label:<4} {name.replace('_', ' ')}")


@pytest.fixture(scope="session")
def synthetic_files(tmp_path_factory):
    """Synthetic dataset on disk plus a seed file that withholds every rule concluding the planted head."""
    from kgloop.synthetic import write_demo

    return write_demo(tmp_path_factory.mktemp("synthetic"))
