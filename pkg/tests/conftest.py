import json
import random
from fractions import Fraction
from pathlib import Path

import pytest

from vulnwsn.wsn import Wsn, WsnEdge

FIXTURES = Path(__file__).parent / "fixtures"
FIXTURE6 = FIXTURES / "fixture6"

ALL_CALLERS = """
class A {
  fn a(x) { B.c(x) }
  fn x() { B.c(1) }
  fn b() { B.c(2) }
}
class B { fn c(y) { } }
"""

# three functions in A, only one of them depends on B
ONE_CALLER = """
class A {
  fn a(x) { B.c(x) }
  fn x() { }
  fn b() { }
}
class B { fn c(y) { } }
"""


@pytest.fixture
def fixture6():
    return FIXTURE6


@pytest.fixture(scope="session")
def oracle6():
    return json.loads((FIXTURE6 / "oracle.json").read_text())


def make_wsn(edges, nodes=None):
    """Wsn from ``(src, dst, weight)`` triples."""
    nodes = set(nodes or ())
    for s, t, _ in edges:
        nodes |= {s, t}
    return Wsn(tuple(nodes), tuple(WsnEdge(s, t, w) for s, t, w in edges))


def random_wsn(seed, max_nodes=10, max_edges=20):
    """Random directed graph with weights in exact tenths."""
    rnd = random.Random(seed)
    n = rnd.randint(2, max_nodes)
    nodes = [f"n{i}" for i in range(n)]
    pairs = [(a, b) for a in nodes for b in nodes if a != b]
    chosen = rnd.sample(pairs, min(len(pairs), rnd.randint(0, max_edges)))
    return make_wsn([(a, b, Fraction(rnd.randint(1, 10), 10)) for a, b in chosen], nodes)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
