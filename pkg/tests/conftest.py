import numpy as np
import pytest

from kgwalk.synthetic import build_graph, kinship

TOY = [("a", "r", "b"), ("a", "r", "c"), ("b", "s", "c"), ("a", "s", "d"), ("d", "r", "c"),
       ("d", "r", "a"), ("c", "r", "e"), ("e", "s", "a"), ("b", "r", "d"), ("b", "r", "e")]


@pytest.fixture
def toy_graph():
    """Five entities, two relations, several multi-target relations."""
    return build_graph(TOY, [], [])


@pytest.fixture(scope="session")
def small_kinship():
    train, dev, test = kinship(families=4, held_out=3, seed=1)
    return build_graph(train, dev, test, eta=64)


def random_kg(seed, n_entities=8, n_relations=2, n_triples=12):
    rng = np.random.default_rng(seed)
    triples = set()
    while len(triples) < n_triples:
        s, o = rng.choice(n_entities, size=2, replace=False)
        triples.add((f"e{s}", f"r{rng.integers(n_relations)}", f"e{o}"))
    return sorted(triples)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
