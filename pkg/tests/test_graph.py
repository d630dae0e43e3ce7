import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphmend.embedding import MockEmbeddingProvider, embed_text
from graphmend.errors import CitationError, EmbeddingError, GraphFormatError, IntegrityError
from graphmend.graph import (
    CHUNK, ENTITY, FACT, SYNONYM, Edge, GraphIndex, Node, load_graph, save_graph, stats, upsert_triple,
)


def test_fixture_round_trip(tiny_graph_file, tmp_path):
    g = load_graph(tiny_graph_file)
    assert (len(g.nodes), len(g.edges)) == (3, 2)
    s = stats(g)
    assert s.nodes == 3 and s.triples == 2
    out = tmp_path / "again.jsonl"
    save_graph(g, out)
    assert load_graph(out) == g
    assert out.read_bytes() == tiny_graph_file.read_bytes()


def test_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    g = load_graph(path)
    assert len(g.nodes) == 0
    assert stats(g).as_dict() == {"chunks": 0, "nodes": 0, "entities": 0, "edges": 0, "triples": 0}


def _lines(path):
    return [json.loads(x) for x in path.read_text().splitlines()]


def _write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def test_fact_citing_absent_chunk(tiny_graph_file, tmp_path):
    recs = _lines(tiny_graph_file)
    for r in recs:
        if r.get("id") == "f1":
            r["provenance"] = ["c9"]
    bad = tmp_path / "bad.jsonl"
    _write(bad, recs)
    with pytest.raises(IntegrityError, match="c9"):
        load_graph(bad)


def test_dangling_endpoint_names_line(tiny_graph_file, tmp_path):
    recs = _lines(tiny_graph_file)
    recs.append({"kind": "edge", "id": "x", "u": "e1", "v": "ghost", "type": SYNONYM})
    bad = tmp_path / "bad.jsonl"
    _write(bad, recs)
    with pytest.raises(IntegrityError, match=f"line {len(recs)}"):
        load_graph(bad)


@pytest.mark.parametrize("line", ["{not json", "[1, 2]", '{"kind": "vertex", "id": "a"}', '{"kind": "node"}'])
def test_malformed_line_reports_number(tiny_graph_file, tmp_path, line):
    text = tiny_graph_file.read_text().splitlines()
    text.insert(2, line)
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(text) + "\n")
    with pytest.raises(GraphFormatError) as info:
        load_graph(bad)
    assert info.value.line == 3
    assert "line 3" in str(info.value)


def test_unwritable_path(tiny_graph_file, tmp_path):
    g = load_graph(tiny_graph_file)
    with pytest.raises(OSError):
        save_graph(g, tmp_path / "missing-dir" / "g.jsonl")


def test_unknown_fields_survive(tiny_graph_file, tmp_path):
    recs = _lines(tiny_graph_file)
    for r in recs:
        r["note"] = {"from": r["id"]}
    src = tmp_path / "extra.jsonl"
    _write(src, recs)
    out = tmp_path / "out.jsonl"
    save_graph(load_graph(src), out)
    assert all(r["note"] == {"from": r["id"]} for r in _lines(out))


def test_missing_features_are_computed(tiny_graph_file, tmp_path):
    recs = _lines(tiny_graph_file)
    for r in recs:
        r.pop("feature", None)
    src = tmp_path / "bare.jsonl"
    _write(src, recs)
    g = load_graph(src, provider=MockEmbeddingProvider(dim=4))
    assert g.features_computed == 3
    np.testing.assert_array_equal(g.nodes["e1"].feature, MockEmbeddingProvider(dim=4).embed("Ada"))


def test_mixed_dimensions_rejected(tiny_graph_file, tmp_path):
    recs = _lines(tiny_graph_file)
    recs[2]["feature"] = [1.0, 0.0]
    bad = tmp_path / "bad.jsonl"
    _write(bad, recs)
    with pytest.raises(IntegrityError, match="dimension"):
        load_graph(bad)


def test_round_trip_after_merge(tiny_graph_file, tmp_path):
    g = load_graph(tiny_graph_file)
    upsert_triple(g, "Ada", "taught", "Dee", {"c1", "c2"}, origin="augment")
    out = tmp_path / "merged.jsonl"
    save_graph(g, out)
    back = load_graph(out)
    assert back == g
    assert back.find_fact("ada", "TAUGHT", " Dee ") is not None


# ---------------------------------------------------------------- upsert


def _chunked(d=4):
    g = GraphIndex(d)
    g.add_chunk("c1", "one")
    g.add_chunk("c2", "two")
    return g


def test_upsert_new_triple():
    g = _chunked()
    eid = g.upsert_triple("Ada", "met", "Bo", {"c1"})
    assert stats(g).nodes == 2 and stats(g).triples == 1
    assert g.edges[eid].weight == 1.0


def test_upsert_twice_bumps_weight_and_unions_provenance():
    g = _chunked()
    a = g.upsert_triple("Ada", "met", "Bo", {"c1"})
    b = g.upsert_triple("  ada ", "MET", "bo", {"c2"})
    assert a == b
    assert len(g.edges) == 1
    assert g.edges[a].weight == 2.0
    assert g.edges[a].provenance == {"c1", "c2"}


@pytest.mark.parametrize("prov", [set(), {"c7"}])
def test_upsert_rejects_bad_provenance(prov):
    g = _chunked()
    with pytest.raises(CitationError):
        g.upsert_triple("Ada", "met", "Bo", prov)
    assert stats(g).nodes == 0


def test_upsert_reuses_existing_entity():
    g = _chunked()
    g.upsert_triple("Ada", "met", "Bo", {"c1"})
    g.upsert_triple("Bo", "met", "Cy", {"c2"})
    assert stats(g).entities == 3


def test_upsert_embedding_failure_leaves_graph_untouched():
    class Broken:
        dim = 4

        def embed(self, text):
            if text == "Cy":
                raise EmbeddingError("down")
            return np.ones(4) / 2

    g = _chunked()
    before = stats(g)
    with pytest.raises(EmbeddingError):
        g.upsert_triple("Ada", "met", "Cy", {"c1"}, provider=Broken())
    assert stats(g) == before


def test_upsert_wrong_dimension_provider():
    g = _chunked()
    with pytest.raises(EmbeddingError):
        g.upsert_triple("Ada", "met", "Bo", {"c1"}, provider=MockEmbeddingProvider(dim=3))


def test_same_label_different_relation_are_distinct():
    g = _chunked()
    g.upsert_triple("Ada", "met", "Bo", {"c1"})
    g.upsert_triple("Ada", "owns", "Bo", {"c1"})
    assert stats(g).triples == 2 and stats(g).entities == 2


@settings(max_examples=60, deadline=None)
@given(st.lists(
    st.tuples(st.sampled_from(["Ada", "Bo", "Cy", "dee"]), st.sampled_from(["met", "owns"]),
              st.sampled_from(["Ada", "bo", "Eve"]), st.sets(st.sampled_from(["c1", "c2"]), min_size=1)),
    max_size=15,
))
def test_upsert_keeps_invariants(ops):
    g = _chunked()
    for s, r, o, prov in ops:
        g.upsert_triple(s, r, o, prov)
    g.check_integrity()
    assert sum(e.weight for e in g.edges.values()) == len(ops)
    assert len(g.fact_keys()) == stats(g).triples


# ---------------------------------------------------------------- construction checks


def test_edge_type_rules():
    g = _chunked()
    p = MockEmbeddingProvider(dim=4)
    g.add_node(Node("a", ENTITY, "A", p.embed("A")))
    g.add_node(Node("b", ENTITY, "B", p.embed("B")))
    g.add_node(Node("c1", CHUNK, "chunk", p.embed("one")))
    with pytest.raises(IntegrityError):
        g.add_edge(Edge("e", "a", "c1", FACT, 1.0, "r", frozenset({"c1"})))
    with pytest.raises(IntegrityError):
        g.add_edge(Edge("e", "a", "a", "Hyperlink"))
    with pytest.raises(IntegrityError, match="relation"):
        g.add_edge(Edge("e", "a", "b", FACT, 1.0, None, frozenset({"c1"})))
    with pytest.raises(IntegrityError, match="weight"):
        g.add_edge(Edge("e", "a", "b", SYNONYM, -1.0))


def test_adjacency_matches_edges(small_synth):
    g = small_synth[0]
    assert g.adjacency_consistent()
    g.check_integrity()


# ---------------------------------------------------------------- embeddings


def test_mock_embedding_laws():
    p = MockEmbeddingProvider(dim=64)
    a1, a2, b = embed_text(p, "alpha"), embed_text(p, "alpha"), embed_text(p, "beta")
    np.testing.assert_array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert abs(np.linalg.norm(a1) - 1.0) < 1e-9


def test_mock_embedding_no_collisions_on_fixture(small_synth):
    g = small_synth[0]
    vecs = {tuple(np.round(n.feature, 12)) for n in g.nodes.values()}
    assert len(vecs) == len(g.nodes)
