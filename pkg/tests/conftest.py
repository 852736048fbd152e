import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from supa.graph import GraphStore, NodeRef, TemporalEdge, TypeTables  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


def edge(tables, src, st, dst, dt, r, t):
    return TemporalEdge(NodeRef(src, tables.node_type_id(st)), NodeRef(dst, tables.node_type_id(dt)),
                        tables.edge_type_id(r), t)


@pytest.fixture
def tables():
    return TypeTables(["User", "Video", "Author"], ["click", "like", "upload"])


@pytest.fixture
def click_graph(tables):
    """The user/video click graph of the worked sampling example, plus an upload."""
    store = GraphStore(tables)
    raw = [("u1", "v1", 1.0), ("u1", "v3", 2.0), ("u2", "v3", 3.0), ("u1", "v4", 4.0),
           ("u3", "v2", 5.0), ("u2", "v1", 6.0)]
    for u, v, t in raw:
        store.add_edge(edge(tables, u, "User", v, "Video", "click", t))
    store.add_edge(edge(tables, "a1", "Author", "v2", "Video", "upload", 7.0))
    return store


@pytest.fixture
def rng():
    return random.Random(7)


# -- acceptance report --------------------------------------------------------------

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): an acceptance criterion")
    config.stash[_RESULTS] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if report.skipped and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        item.config.stash[_RESULTS].append((mark.args[0], mark.args[1], status, detail))


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(results):
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")
