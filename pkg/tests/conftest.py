from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from graphmend.embedding import MockEmbeddingProvider
from graphmend.graph import ENTITY, FACT, SYNONYM, Edge, GraphIndex, Node, save_graph
from graphmend.sampler import SubgraphView
from graphmend.synth import SynthConfig, generate

DATA = Path(__file__).parent / "data"

# criterion number -> one-line verdict, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

SMALL_SYNTH = SynthConfig(
    n_entities=120, n_chunks=30, n_planted=12, n_failure_regions=4, n_synonyms=6, seed=0,
)


def entity_graph(edges, d=8, chunks=("c1",)):
    """Graph from ``(u, v, type, weight)`` tuples; entity labels equal ids."""
    g = GraphIndex(d)
    provider = MockEmbeddingProvider(dim=d)
    for cid in chunks:
        g.add_chunk(cid, f"text of {cid}")
    names = sorted({x for u, v, *_ in edges for x in (u, v)})
    for n in names:
        g.add_node(Node(n, ENTITY, n, provider.embed(n)))
    for i, (u, v, etype, w) in enumerate(edges):
        if etype == FACT:
            g.add_edge(Edge(f"x{i:03d}", u, v, FACT, w, f"rel{i}", frozenset({chunks[0]})))
        else:
            g.add_edge(Edge(f"x{i:03d}", u, v, etype, w))
    return g


def full_view(g, root, label=None):
    nodes = tuple(sorted(n for n, node in g.nodes.items() if node.type == ENTITY))
    edges = tuple(sorted(e.id for e in g.edges.values() if e.type in (FACT, SYNONYM)))
    return SubgraphView(g, root, nodes, edges, label)


def random_view(rng, n_nodes, n_edges, d=8, synonym_share=0.3):
    """A connected-ish random view for numerical tests."""
    edges = []
    for i in range(1, n_nodes):
        edges.append((f"n{int(rng.integers(i)):02d}", f"n{i:02d}", FACT, 1.0))
    while len(edges) < n_edges:
        a, b = rng.choice(n_nodes, size=2, replace=False)
        etype = SYNONYM if rng.random() < synonym_share else FACT
        edges.append((f"n{a:02d}", f"n{b:02d}", etype, 1.0))
    return full_view(entity_graph(edges, d=d), "n00")


@pytest.fixture
def five_node_graph():
    # A's neighbors: B (w=2), C (w=8, clipped to 5), D (synonym w=1, halved), E (w=1)
    return entity_graph([
        ("A", "B", FACT, 2.0),
        ("A", "C", FACT, 8.0),
        ("A", "D", SYNONYM, 1.0),
        ("A", "E", FACT, 1.0),
        ("B", "C", FACT, 1.0),
    ])


@pytest.fixture
def tiny_graph_file(tmp_path):
    """Three entities, two Fact edges, two chunks."""
    g = GraphIndex(4)
    p = MockEmbeddingProvider(dim=4)
    g.add_chunk("c1", "Ada met Bo.")
    g.add_chunk("c2", "Bo visited Cy.")
    for n, label in (("e1", "Ada"), ("e2", "Bo"), ("e3", "Cy")):
        g.add_node(Node(n, ENTITY, label, p.embed(label)))
    g.add_edge(Edge("f1", "e1", "e2", FACT, 1.0, "met", frozenset({"c1"})))
    g.add_edge(Edge("f2", "e2", "e3", FACT, 1.0, "visited", frozenset({"c2"})))
    path = tmp_path / "tiny.jsonl"
    save_graph(g, path)
    return path


@pytest.fixture(scope="session")
def small_synth():
    return generate(SMALL_SYNTH)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

