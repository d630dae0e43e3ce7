import numpy as np
import pytest
from conftest import entity_graph

from graphmend.embedding import MockEmbeddingProvider
from graphmend.errors import EmptyDistributionError
from graphmend.graph import ENTITY, ENTITY_CHUNK, FACT, SYNONYM, Edge, Node
from graphmend.sampler import (
    SamplerConfig, eligible_roots, is_informative_label, random_walk, root_rng,
    sample_intact_view, sample_subgraph, transition_distribution,
)

CFG = SamplerConfig()


def test_two_fact_neighbors():
    g = entity_graph([("u", "a", FACT, 2.0), ("u", "b", FACT, 3.0)])
    assert transition_distribution(g, CFG, "u") == pytest.approx({"a": 0.4, "b": 0.6}, abs=1e-12)


def test_clip_and_multiplier():
    g = entity_graph([("u", "a", FACT, 100.0), ("u", "b", SYNONYM, 5.0)])
    assert transition_distribution(g, CFG, "u") == pytest.approx({"a": 2 / 3, "b": 1 / 3}, abs=1e-12)


def test_single_neighbor():
    g = entity_graph([("u", "a", FACT, 7.0)])
    assert transition_distribution(g, CFG, "u") == {"a": 1.0}


def test_parallel_edges_add_up():
    g = entity_graph([("u", "a", FACT, 1.0), ("u", "a", SYNONYM, 1.0), ("u", "b", FACT, 1.5)])
    assert transition_distribution(g, CFG, "u") == pytest.approx({"a": 0.5, "b": 0.5})


def test_isolated_node_has_no_distribution():
    g = entity_graph([("u", "a", FACT, 1.0)])
    g.add_node(Node("lonely", ENTITY, "lonely", np.zeros(8)))
    with pytest.raises(EmptyDistributionError):
        transition_distribution(g, CFG, "lonely")


def test_eligible_roots():
    g = entity_graph([("Paris", "1979", FACT, 1.0), ("Paris", "3.14", FACT, 1.0), ("Paris", "-1,979", SYNONYM, 1.0)])
    p = MockEmbeddingProvider(dim=8)
    g.add_node(Node("loner", ENTITY, "Loner", p.embed("Loner")))
    g.add_node(Node("c1node", "Chunk", "chunk", p.embed("x")))
    g.add_edge(Edge("m", "loner", "c1node", ENTITY_CHUNK))
    assert eligible_roots(g) == ["Paris"]


@pytest.mark.parametrize("label,ok", [("Paris", True), ("1979", False), ("1,979", False), ("3.14", False),
                                      ("-42", False), ("  ", False), ("R2-D2", True), ("Zoë", True)])
def test_informative_labels(label, ok):
    assert is_informative_label(label) is ok


def test_walk_dead_end_stops_after_one_hop():
    g = entity_graph([("r", "a", FACT, 1.0)])
    walk = random_walk(g, CFG, "r", np.random.default_rng(0), length=4)
    assert walk == ["r", "a"]


def test_walk_is_deterministic(small_synth):
    g = small_synth[0]
    root = eligible_roots(g)[0]
    walks = [random_walk(g, CFG, root, np.random.default_rng(9), length=10) for _ in range(2)]
    assert walks[0] == walks[1]


def test_walk_never_backtracks(small_synth):
    g = small_synth[0]
    rng = np.random.default_rng(3)
    for root in eligible_roots(g)[:40]:
        walk = random_walk(g, CFG, root, rng, length=12)
        assert all(walk[i] != walk[i + 2] for i in range(len(walk) - 2))
        for a, b in zip(walk, walk[1:]):
            assert any(n == b for n, _ in g.entity_neighbors(a))


def _star(n_leaves, etype=FACT):
    return entity_graph([("hub", f"leaf{i}", etype, 1.0) for i in range(n_leaves)])


def test_star_gives_view():
    g = _star(6)
    view = sample_subgraph(g, SamplerConfig(walks_per_root=16, walk_length=1), "hub", np.random.default_rng(0))
    assert view is not None
    assert view.root == "hub" and view.nodes[0] == "hub"
    assert len(view.nodes) >= 5
    assert set(view.edges) <= set(g.edges)


def test_small_component_filtered():
    g = entity_graph([("a", "b", FACT, 1.0)])
    assert sample_subgraph(g, CFG, "a", np.random.default_rng(0)) is None


def test_synonym_only_component_filtered():
    g = _star(6, SYNONYM)
    assert sample_subgraph(g, SamplerConfig(walks_per_root=20), "hub", np.random.default_rng(0)) is None


def test_view_edges_are_induced(small_synth):
    g = small_synth[0]
    for root in eligible_roots(g)[:30]:
        view = sample_subgraph(g, CFG, root, root_rng(0, root))
        if view is None:
            continue
        nodes = view.node_set
        expected = {e.id for e in g.edges.values()
                    if e.type in (FACT, SYNONYM) and e.u in nodes and e.v in nodes}
        assert set(view.edges) == expected
        assert len(view.edges) == len(set(view.edges))


def _dense(n=50, p=0.15, seed=0):
    rng = np.random.default_rng(seed)
    edges = [(f"v{i:02d}", f"v{i + 1:02d}", FACT, 1.0) for i in range(n - 1)]
    for i in range(n):
        for j in range(i + 2, n):
            if rng.random() < p:
                edges.append((f"v{i:02d}", f"v{j:02d}", FACT, float(rng.integers(1, 4))))
    return entity_graph(edges)


def test_intact_view_is_wider_on_average():
    g = _dense()
    std, wide = [], []
    for seed in range(100):
        std.append(len(sample_subgraph(g, CFG, "v00", np.random.default_rng(seed)).nodes))
        wide.append(len(sample_intact_view(g, CFG, "v00", np.random.default_rng(seed)).nodes))
    assert np.mean(wide) >= np.mean(std)


def test_factor_one_is_the_standard_procedure():
    g = _dense()
    cfg = SamplerConfig(intact_expansion_factor=1.0)
    for seed in range(20):
        a = sample_subgraph(g, cfg, "v00", np.random.default_rng(seed))
        b = sample_intact_view(g, cfg, "v00", np.random.default_rng(seed))
        assert (a.nodes, a.edges) == (b.nodes, b.edges)
        assert b.label == 0


def test_intact_view_saturates_on_small_component():
    g = entity_graph([("a", "b", FACT, 1.0), ("b", "c", FACT, 1.0), ("c", "d", FACT, 1.0),
                      ("d", "e", FACT, 1.0), ("e", "a", FACT, 1.0)])
    view = sample_intact_view(g, SamplerConfig(walks_per_root=16), "a", np.random.default_rng(0))
    assert view.node_set == set("abcde")
    assert len(view.edges) == 5


def test_root_rng_independent_of_order():
    a = root_rng(5, "e0001").random(3)
    root_rng(5, "e0002").random(3)
    np.testing.assert_array_equal(a, root_rng(5, "e0001").random(3))
    assert not np.array_equal(a, root_rng(6, "e0001").random(3))


@pytest.mark.parametrize("kwargs", [{"clip": 0}, {"alpha_synonym": 1.5}, {"walk_length": 0},
                                    {"intact_expansion_factor": 0.5}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SamplerConfig(**kwargs)
