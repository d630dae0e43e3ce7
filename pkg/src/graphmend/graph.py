"""Heterogeneous graph index with chunk provenance.

The index holds Entity and Chunk nodes, Fact / Synonym / EntityChunk edges,
and the chunk table that Fact edge provenance points into. It is persisted
as line-delimited JSON records with a ``kind`` discriminator.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
import threading
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .embedding import DEFAULT_DIM, EmbeddingProvider, MockEmbeddingProvider
from .errors import CitationError, EmbeddingError, GraphFormatError, IntegrityError

ENTITY = "Entity"
CHUNK = "Chunk"
NODE_TYPES = (ENTITY, CHUNK)

FACT = "Fact"
SYNONYM = "Synonym"
ENTITY_CHUNK = "EntityChunk"
EDGE_TYPES = (FACT, SYNONYM, ENTITY_CHUNK)
ENTITY_EDGE_TYPES = (FACT, SYNONYM)

_NODE_KEYS = {"kind", "id", "type", "label", "feature"}
_EDGE_KEYS = {"kind", "id", "u", "v", "type", "weight", "relation", "provenance", "origin"}
_CHUNK_KEYS = {"kind", "id", "text"}


def normalize_label(text: str) -> str:
    """Case-fold and collapse whitespace; used for entity and triple identity."""
    return " ".join(text.split()).casefold()


def triple_key(subject: str, relation: str, obj: str) -> tuple[str, str, str]:
    return normalize_label(subject), normalize_label(relation), normalize_label(obj)


@dataclass
class Node:
    id: str
    type: str
    label: str
    feature: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Node):
            return NotImplemented
        same_feature = (self.feature is None and other.feature is None) or (
            self.feature is not None
            and other.feature is not None
            and np.array_equal(self.feature, other.feature)
        )
        return (
            (self.id, self.type, self.label, self.extra)
            == (other.id, other.type, other.label, other.extra)
            and same_feature
        )


@dataclass
class Edge:
    id: str
    u: str
    v: str
    type: str
    weight: float = 1.0
    relation: str | None = None
    provenance: frozenset[str] = frozenset()
    origin: str | None = None
    extra: dict = field(default_factory=dict)

    def other(self, node_id: str) -> str:
        return self.v if node_id == self.u else self.u


@dataclass(frozen=True)
class GraphStats:
    chunks: int = 0
    nodes: int = 0
    entities: int = 0
    edges: int = 0
    triples: int = 0

    def delta(self, before: "GraphStats") -> dict[str, int]:
        """Post-minus-pre counts, keyed ``added_<field>``."""
        return {f"added_{f.name}": getattr(self, f.name) - getattr(before, f.name) for f in fields(self)}

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class GraphIndex:
    """Typed multigraph plus chunk table.

    Reads may happen concurrently; every mutation goes through ``write_lock``.
    """

    def __init__(self, d: int = DEFAULT_DIM):
        self.d = d
        self.nodes: dict[str, Node] = {}
        self.edges: dict[str, Edge] = {}
        self.chunks: dict[str, str] = {}
        self.chunk_extra: dict[str, dict] = {}
        self._adj: dict[str, dict[str, list[tuple[str, str]]]] = {}
        self._entity_by_label: dict[str, str] = {}
        self._fact_by_key: dict[tuple[str, str, str], str] = {}
        self.write_lock = threading.RLock()
        # nodes whose feature was embedded at load time rather than read from file
        self.features_computed = 0

    # ------------------------------------------------------------------
    # construction

    def add_chunk(self, chunk_id: str, text: str, extra: dict | None = None) -> None:
        if chunk_id in self.chunks:
            raise IntegrityError(f"duplicate chunk id {chunk_id!r}")
        self.chunks[chunk_id] = text
        if extra:
            self.chunk_extra[chunk_id] = dict(extra)

    def add_node(self, node: Node) -> None:
        if node.id in self.nodes:
            raise IntegrityError(f"duplicate node id {node.id!r}")
        if node.type not in NODE_TYPES:
            raise IntegrityError(f"node {node.id!r}: unknown type {node.type!r}")
        if node.feature is not None:
            node.feature = np.asarray(node.feature, dtype=np.float64)
            if node.feature.shape != (self.d,):
                raise IntegrityError(
                    f"node {node.id!r}: feature dim {node.feature.shape} != index dim {self.d}"
                )
        self.nodes[node.id] = node
        self._adj[node.id] = {t: [] for t in EDGE_TYPES}
        if node.type == ENTITY:
            self._entity_by_label.setdefault(normalize_label(node.label), node.id)

    def add_edge(self, edge: Edge) -> None:
        if edge.id in self.edges:
            raise IntegrityError(f"duplicate edge id {edge.id!r}")
        self._check_edge(edge)
        if edge.type == FACT:
            key = self.fact_key(edge)
            if key in self._fact_by_key:
                raise IntegrityError(f"edge {edge.id!r} duplicates triple of {self._fact_by_key[key]!r}")
            self._fact_by_key[key] = edge.id
        self.edges[edge.id] = edge
        self._adj[edge.u][edge.type].append((edge.v, edge.id))
        if edge.v != edge.u:
            self._adj[edge.v][edge.type].append((edge.u, edge.id))

    def _check_edge(self, edge: Edge) -> None:
        for end in (edge.u, edge.v):
            if end not in self.nodes:
                raise IntegrityError(f"edge {edge.id!r}: dangling endpoint {end!r}")
        if edge.type not in EDGE_TYPES:
            raise IntegrityError(f"edge {edge.id!r}: unknown type {edge.type!r}")
        tu, tv = self.nodes[edge.u].type, self.nodes[edge.v].type
        if edge.type in ENTITY_EDGE_TYPES and not (tu == ENTITY and tv == ENTITY):
            raise IntegrityError(f"edge {edge.id!r}: {edge.type} must join two entities")
        if edge.type == ENTITY_CHUNK and {tu, tv} != {ENTITY, CHUNK}:
            raise IntegrityError(f"edge {edge.id!r}: EntityChunk must join an entity and a chunk")
        if not (edge.weight >= 0 and np.isfinite(edge.weight)):
            raise IntegrityError(f"edge {edge.id!r}: weight must be finite and >= 0")
        if edge.type == FACT:
            if not edge.relation:
                raise IntegrityError(f"edge {edge.id!r}: Fact edge without relation")
            if not edge.provenance:
                raise IntegrityError(f"edge {edge.id!r}: Fact edge without provenance")
            missing = sorted(set(edge.provenance) - self.chunks.keys())
            if missing:
                raise IntegrityError(f"edge {edge.id!r}: provenance cites unknown chunks {missing}")

    # ------------------------------------------------------------------
    # queries

    def fact_key(self, edge: Edge) -> tuple[str, str, str]:
        return triple_key(self.nodes[edge.u].label, edge.relation or "", self.nodes[edge.v].label)

    def neighbors(self, node_id: str, edge_type: str) -> list[tuple[str, str]]:
        """(neighbor id, edge id) pairs for one edge type, both directions."""
        return self._adj[node_id][edge_type]

    def entity_neighbors(self, node_id: str) -> list[tuple[str, str]]:
        adj = self._adj[node_id]
        return adj[FACT] + adj[SYNONYM]

    def find_entity(self, label: str) -> str | None:
        return self._entity_by_label.get(normalize_label(label))

    def find_fact(self, subject: str, relation: str, obj: str) -> str | None:
        return self._fact_by_key.get(triple_key(subject, relation, obj))

    def fact_keys(self) -> set[tuple[str, str, str]]:
        return set(self._fact_by_key)

    def entity_ids(self) -> list[str]:
        return [n.id for n in self.nodes.values() if n.type == ENTITY]

    def feature_matrix(self, node_ids: Iterable[str]) -> np.ndarray:
        return np.stack([self.nodes[n].feature for n in node_ids])

    def rebuild_adjacency(self) -> dict[str, dict[str, list[tuple[str, str]]]]:
        adj = {n: {t: [] for t in EDGE_TYPES} for n in self.nodes}
        for e in self.edges.values():
            adj[e.u][e.type].append((e.v, e.id))
            if e.v != e.u:
                adj[e.v][e.type].append((e.u, e.id))
        return adj

    def adjacency_consistent(self) -> bool:
        fresh = self.rebuild_adjacency()
        if fresh.keys() != self._adj.keys():
            return False
        return all(
            sorted(fresh[n][t]) == sorted(self._adj[n][t]) for n in fresh for t in EDGE_TYPES
        )

    def check_integrity(self) -> None:
        """Re-validate every invariant from scratch; raises IntegrityError."""
        for node in self.nodes.values():
            if node.feature is None or node.feature.shape != (self.d,):
                raise IntegrityError(f"node {node.id!r}: missing or mis-sized feature")
            if node.type == CHUNK and node.id not in self.chunks:
                raise IntegrityError(f"chunk node {node.id!r} has no chunk text")
        seen = set()
        for edge in self.edges.values():
            self._check_edge(edge)
            if edge.type == FACT:
                key = self.fact_key(edge)
                if key in seen:
                    raise IntegrityError(f"duplicate triple {key}")
                seen.add(key)
        if not self.adjacency_consistent():
            raise IntegrityError("adjacency out of sync with edge set")

    # ------------------------------------------------------------------
    # mutation

    def upsert_triple(
        self,
        subject: str,
        relation: str,
        obj: str,
        provenance: Iterable[str],
        provider: EmbeddingProvider | None = None,
        origin: str | None = None,
    ) -> str:
        """Insert a Fact triple or bump the weight of its existing edge.

        New endpoint entities get features from ``provider``; all embedding
        happens before the graph is touched, so a provider failure leaves it
        unchanged.
        """
        provenance = frozenset(provenance)
        if not provenance:
            raise CitationError("triple has no supporting chunk")
        missing = sorted(provenance - self.chunks.keys())
        if missing:
            raise CitationError(f"triple cites unknown chunks {missing}")
        s_label, r_label, o_label = (" ".join(x.split()) for x in (subject, relation, obj))
        if not (s_label and r_label and o_label):
            raise IntegrityError("triple has an empty component")

        with self.write_lock:
            existing = self.find_fact(s_label, r_label, o_label)
            if existing is not None:
                edge = self.edges[existing]
                edge.weight += 1.0
                edge.provenance = edge.provenance | provenance
                return existing

            provider = provider or MockEmbeddingProvider(dim=self.d)
            new_nodes = []
            ids = {}
            for label in dict.fromkeys((s_label, o_label)):
                node_id = self.find_entity(label)
                if node_id is None:
                    vec = np.asarray(provider.embed(label), dtype=np.float64)
                    if vec.shape != (self.d,):
                        raise EmbeddingError(f"provider dim {vec.shape} != index dim {self.d}")
                    node_id = self._fresh_id("ent:" + _slug(label), reserved=ids.values())
                    new_nodes.append(Node(node_id, ENTITY, label, vec))
                ids[label] = node_id
            for node in new_nodes:
                self.add_node(node)
            key = triple_key(s_label, r_label, o_label)
            edge_id = self._fresh_id("fact:" + hashlib.sha1("\x1f".join(key).encode()).hexdigest()[:12])
            self.add_edge(
                Edge(edge_id, ids[s_label], ids[o_label], FACT, 1.0, r_label, provenance, origin)
            )
            return edge_id

    def _fresh_id(self, base: str, reserved=()) -> str:
        taken = set(reserved)
        candidate, n = base, 1
        while candidate in self.nodes or candidate in self.edges or candidate in taken:
            n += 1
            candidate = f"{base}~{n}"
        return candidate

    def copy(self) -> "GraphIndex":
        clone = GraphIndex(self.d)
        clone.nodes = copy.deepcopy(self.nodes)
        clone.edges = copy.deepcopy(self.edges)
        clone.chunks = dict(self.chunks)
        clone.chunk_extra = copy.deepcopy(self.chunk_extra)
        clone._adj = copy.deepcopy(self._adj)
        clone._entity_by_label = dict(self._entity_by_label)
        clone._fact_by_key = dict(self._fact_by_key)
        return clone

    def __eq__(self, other):
        if not isinstance(other, GraphIndex):
            return NotImplemented
        return (
            self.d == other.d
            and self.chunks == other.chunks
            and self.chunk_extra == other.chunk_extra
            and self.nodes == other.nodes
            and self.edges == other.edges
        )

    __hash__ = None

    def __repr__(self):
        s = stats(self)
        return f"GraphIndex(nodes={s.nodes}, edges={s.edges}, triples={s.triples}, chunks={s.chunks})"


def _slug(label: str) -> str:
    return re.sub(r"[^0-9a-z]+", "_", normalize_label(label)).strip("_") or "entity"


def stats(g: GraphIndex) -> GraphStats:
    return GraphStats(
        chunks=len(g.chunks),
        nodes=len(g.nodes),
        entities=sum(1 for n in g.nodes.values() if n.type == ENTITY),
        edges=len(g.edges),
        triples=sum(1 for e in g.edges.values() if e.type == FACT),
    )


def upsert_triple(g: GraphIndex, subject, relation, obj, provenance, provider=None, origin=None) -> str:
    return g.upsert_triple(subject, relation, obj, provenance, provider=provider, origin=origin)


# ----------------------------------------------------------------------
# line-delimited persistence


def load_graph(path, provider: EmbeddingProvider | None = None) -> GraphIndex:
    """Read a graph file. Nodes without a stored feature are embedded with
    ``provider`` (a mock provider of the file's dimension when omitted)."""
    chunks, nodes, edges = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict):
                raise GraphFormatError("record is not an object", lineno)
            kind = rec.get("kind")
            try:
                if kind == "chunk":
                    chunks.append((_chunk_from_record(rec), lineno))
                elif kind == "node":
                    nodes.append((_node_from_record(rec), lineno))
                elif kind == "edge":
                    edges.append((_edge_from_record(rec), lineno))
                else:
                    raise GraphFormatError(f"unknown record kind {kind!r}", lineno)
            except (KeyError, TypeError, ValueError) as exc:
                raise GraphFormatError(f"bad {kind} record: {exc!r}", lineno) from None

    dims = {len(n.feature) for n, _ in nodes if n.feature is not None}
    if len(dims) > 1:
        raise IntegrityError(f"mixed feature dimensions {sorted(dims)}")
    if dims:
        d = dims.pop()
        if provider is not None and any(n.feature is None for n, _ in nodes) and provider.dim != d:
            raise IntegrityError(f"provider dim {provider.dim} != file feature dim {d}")
    else:
        d = provider.dim if provider is not None else DEFAULT_DIM
    provider = provider or MockEmbeddingProvider(dim=d)

    g = GraphIndex(d)
    for (cid, text, extra), lineno in chunks:
        _at_line(lineno, g.add_chunk, cid, text, extra)
    for node, lineno in nodes:
        if node.feature is None:
            text = g.chunks.get(node.id, node.label) if node.type == CHUNK else node.label
            node.feature = provider.embed(text)
            g.features_computed += 1
        _at_line(lineno, g.add_node, node)
    for node, lineno in nodes:
        if node.type == CHUNK and node.id not in g.chunks:
            raise IntegrityError(f"line {lineno}: chunk node {node.id!r} has no chunk record")
    for edge, lineno in edges:
        _at_line(lineno, g.add_edge, edge)
    return g


def _at_line(lineno, fn, *args):
    try:
        fn(*args)
    except IntegrityError as exc:
        raise IntegrityError(f"line {lineno}: {exc}") from None


def _chunk_from_record(rec):
    cid, text = rec["id"], rec["text"]
    if not isinstance(cid, str) or not isinstance(text, str):
        raise TypeError("chunk id and text must be strings")
    return cid, text, {k: v for k, v in rec.items() if k not in _CHUNK_KEYS}


def _node_from_record(rec) -> Node:
    feature = rec.get("feature")
    if feature is not None:
        feature = np.asarray(feature, dtype=np.float64)
        if feature.ndim != 1:
            raise ValueError("feature must be a flat array")
    for key in ("id", "type", "label"):
        if not isinstance(rec[key], str):
            raise TypeError(f"{key} must be a string")
    return Node(
        rec["id"], rec["type"], rec["label"], feature,
        {k: v for k, v in rec.items() if k not in _NODE_KEYS},
    )


def _edge_from_record(rec) -> Edge:
    for key in ("id", "u", "v", "type"):
        if not isinstance(rec[key], str):
            raise TypeError(f"{key} must be a string")
    prov = rec.get("provenance") or []
    if not isinstance(prov, list):
        raise TypeError("provenance must be a list")
    return Edge(
        rec["id"], rec["u"], rec["v"], rec["type"],
        float(rec.get("weight", 1.0)),
        rec.get("relation"),
        frozenset(prov),
        rec.get("origin"),
        {k: v for k, v in rec.items() if k not in _EDGE_KEYS},
    )


def graph_records(g: GraphIndex):
    for cid, text in g.chunks.items():
        yield {"kind": "chunk", "id": cid, "text": text, **g.chunk_extra.get(cid, {})}
    for n in g.nodes.values():
        rec = {"kind": "node", "id": n.id, "type": n.type, "label": n.label}
        if n.feature is not None:
            rec["feature"] = n.feature.tolist()
        rec.update(n.extra)
        yield rec
    for e in g.edges.values():
        rec = {"kind": "edge", "id": e.id, "u": e.u, "v": e.v, "type": e.type, "weight": e.weight}
        if e.relation is not None:
            rec["relation"] = e.relation
        if e.provenance:
            rec["provenance"] = sorted(e.provenance)
        if e.origin is not None:
            rec["origin"] = e.origin
        rec.update(e.extra)
        yield rec


def save_graph(g: GraphIndex, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in graph_records(g):
            fh.write(json.dumps(rec, ensure_ascii=False))
            fh.write("\n")
    tmp.replace(path)
