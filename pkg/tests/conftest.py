import numpy as np
import pytest

from grtm.corpus import Corpus, Document

ACCEPTANCE_RESULTS = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_corpus():
    docs = [
        Document("a", [0, 1, 1], "x"),
        Document("b", [2], "x"),
        Document("c", [0, 2, 3], "y"),
        Document("d", [3, 3], "y"),
        Document("e", [1, 2, 3, 0], None),
    ]
    links = {(0, 1), (2, 3), (4, 0), (3, 2)}
    return Corpus(docs, 4, links, directed=True)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
