"""Synthetic chunked corpora with planted cross-chunk relations.

Chunks form a chain: each entity has a home chunk and is also mentioned in
the neighboring chunks, so facts extracted from consecutive chunks share
entities and the entity graph is connected. A number of short "failure
regions" (runs of consecutive chunks) get thinner extraction, and planted
relations live inside them: each one pairs an entity from one chunk of the
region with an entity from another, and is supported only by the two chunks
together. Hidden planted relations are left out of the index while their
supporting sentences stay in the chunk text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .completion import PlantedTriple
from .embedding import EmbeddingProvider, MockEmbeddingProvider
from .errors import ConfigError
from .graph import (
    CHUNK, ENTITY, ENTITY_CHUNK, FACT, SYNONYM, Edge, GraphIndex, Node, triple_key,
)

RELATIONS = (
    "works with", "met", "wrote to", "owns", "visited", "distrusts", "married",
    "served under", "inherited from", "sold", "rescued", "taught", "betrayed",
    "funded", "advised",
)

PATTERNS = {
    "alias": (
        "is also known as",
        "{s} later took on another name.",
        "Under that other name, {o}, the same person reappears.",
    ),
    "causal": (
        "led to",
        "{s} set a chain of events in motion.",
        "That chain of events ended in {o}.",
    ),
    "locative": (
        "is located in",
        "{s} lies on the far side of the river.",
        "Everything beyond the river belongs to {o}.",
    ),
}

_ONSETS = ("b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "th")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ea", "ou")
_CODAS = ("", "n", "r", "s", "l", "th", "nd", "x")


@dataclass(frozen=True)
class SynthConfig:
    n_entities: int = 500
    n_chunks: int = 120
    triples_per_chunk: float = 12.5
    n_planted: int = 100
    hide_fraction: float = 1.0
    new_entity_share: float = 0.2
    pattern_mix: tuple[tuple[str, float], ...] = (("alias", 1.0), ("causal", 1.0), ("locative", 1.0))
    chunks_per_doc: int = 10
    n_failure_regions: int = 12
    region_length: int = 3
    failure_thinning: float = 0.5
    n_synonyms: int = 25
    numeric_share: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.hide_fraction <= 1:
            raise ConfigError("hide_fraction must lie in (0, 1]")
        for name in ("n_entities", "n_chunks", "n_planted", "chunks_per_doc",
                     "n_failure_regions", "region_length"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.triples_per_chunk <= 0:
            raise ConfigError("triples_per_chunk must be positive")
        if not 0 <= self.new_entity_share <= 1 or not 0 < self.failure_thinning <= 1:
            raise ConfigError("new_entity_share must lie in [0, 1], failure_thinning in (0, 1]")
        if self.region_length < 2:
            raise ConfigError("region_length must be >= 2 to host cross-chunk relations")
        if self.n_failure_regions * self.region_length > self.n_chunks:
            raise ConfigError("failure regions do not fit in the chunk chain")
        if self.n_entities < 2 * self.n_chunks:
            raise ConfigError("need at least two entities per chunk")
        mix = dict(self.pattern_mix)
        if not mix or any(p not in PATTERNS or w < 0 for p, w in mix.items()) or sum(mix.values()) <= 0:
            raise ConfigError(f"pattern_mix must weight a subset of {sorted(PATTERNS)}")
        object.__setattr__(self, "pattern_mix", tuple((p, float(w)) for p, w in mix.items()))


@dataclass(frozen=True)
class PlantedRelation:
    subject: str
    relation: str
    object: str
    citations: tuple[str, str]
    pattern: str
    hidden: bool
    new_entity: bool = False

    @property
    def key(self):
        return triple_key(self.subject, self.relation, self.object)

    def as_triple(self) -> PlantedTriple:
        return PlantedTriple(self.subject, self.relation, self.object, self.citations)


@dataclass
class PlantedTruth:
    planted: list[PlantedRelation] = field(default_factory=list)
    deleted_entities: list[str] = field(default_factory=list)

    @property
    def hidden(self) -> list[PlantedRelation]:
        return [p for p in self.planted if p.hidden]

    def mock_table(self) -> list[PlantedTriple]:
        return [p.as_triple() for p in self.planted]


def _names(rng, n, taken):
    out = []
    while len(out) < n:
        parts = [
            rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS)
            for _ in range(int(rng.integers(2, 4)))
        ]
        name = "".join(parts).capitalize()
        if rng.random() < 0.5:
            name += " " + (rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS)).capitalize()
        if name.casefold() not in taken:
            taken.add(name.casefold())
            out.append(name)
    return out


def _allocate(total, weights):
    """Largest-remainder split of ``total`` proportional to ``weights``."""
    weights = np.asarray(weights, dtype=np.float64)
    raw = total * weights / weights.sum()
    base = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - base), kind="stable")[: total - base.sum()]:
        base[i] += 1
    return base


def generate(cfg: SynthConfig | None = None, provider: EmbeddingProvider | None = None):
    """Build ``(graph, truth, mock_table)`` deterministically from ``cfg.seed``."""
    cfg = cfg or SynthConfig()
    provider = provider or MockEmbeddingProvider()
    rng = np.random.default_rng(cfg.seed)
    n_e, n_c = cfg.n_entities, cfg.n_chunks

    taken: set[str] = set()
    n_numeric = int(round(cfg.numeric_share * n_e))
    years = rng.choice(np.arange(1500, 2000), size=n_numeric, replace=False)
    labels = [str(int(y)) for y in years] + _names(rng, n_e - n_numeric, taken)
    taken.update(labels)
    labels = [labels[int(i)] for i in rng.permutation(n_e)]
    home = [[] for _ in range(n_c)]
    for i in range(n_e):
        home[i * n_c // n_e].append(i)
    pools = [sorted(set(home[k]).union(*(home[j] for j in (k - 1, k + 1) if 0 <= j < n_c))) for k in range(n_c)]
    chunk_ids = [f"c{k:04d}" for k in range(n_c)]

    # failure regions: non-overlapping runs of consecutive chunks
    slots = n_c // cfg.region_length
    starts = sorted(int(s) * cfg.region_length for s in rng.choice(slots, size=cfg.n_failure_regions, replace=False))
    regions = [list(range(s, s + cfg.region_length)) for s in starts]
    failing = {k for r in regions for k in r}

    # base extraction
    quotas = _allocate(
        int(round(cfg.triples_per_chunk * n_c)),
        [cfg.failure_thinning if k in failing else 1.0 for k in range(n_c)],
    )
    facts: dict[tuple, dict] = {}
    sentences: list[list[str]] = [[] for _ in range(n_c)]
    mentions: list[set[int]] = [set() for _ in range(n_c)]
    pair_seen: set[tuple[int, int]] = set()
    for k in range(n_c):
        made, attempts = 0, 0
        while made < quotas[k] and attempts < 50 * max(1, quotas[k]):
            attempts += 1
            s = int(rng.choice(home[k])) if rng.random() < 0.6 else int(rng.choice(pools[k]))
            o = int(rng.choice(pools[k]))
            if s == o:
                continue
            rel = str(rng.choice(RELATIONS))
            key = (s, rel, o)
            if key in facts:
                facts[key]["chunks"].add(k)
                continue
            facts[key] = {"chunks": {k}}
            pair_seen.update({(s, o), (o, s)})
            sentences[k].append(f"{labels[s]} {rel} {labels[o]}.")
            mentions[k].update((s, o))
            made += 1

    # connectivity repair: in chunk order, link each entity outside the first
    # entity's component to a pool member inside it (pools overlap, so one always exists)
    parent = list(range(n_e))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for s, _, o in facts:
        parent[find(s)] = find(o)
    for k in range(n_c):
        for i in home[k]:
            if find(i) == find(0):
                continue
            partners = [j for j in pools[k] if j != i and find(j) == find(0) and (i, j) not in pair_seen]
            if not partners:
                continue
            o = int(rng.choice(partners))
            rel = str(rng.choice(RELATIONS))
            facts[(i, rel, o)] = {"chunks": {k}}
            pair_seen.update({(i, o), (o, i)})
            sentences[k].append(f"{labels[i]} {rel} {labels[o]}.")
            mentions[k].update((i, o))
            parent[find(i)] = find(o)

    # planted cross-chunk relations
    mix = dict(cfg.pattern_mix)
    pattern_names = sorted(mix)
    pattern_p = np.array([mix[p] for p in pattern_names]) / sum(mix.values())
    candidates = []
    for region in regions:
        for a in region:
            for b in region:
                if a < b:
                    candidates += [(s, o, a, b) for s in home[a] for o in home[b] if (s, o) not in pair_seen]
    if len(candidates) < cfg.n_planted:
        raise ConfigError(f"only {len(candidates)} cross-chunk pairs available for {cfg.n_planted} planted relations")
    n_hidden = int(round(cfg.hide_fraction * cfg.n_planted))
    n_new = int(round(cfg.new_entity_share * n_hidden))
    planted: list[PlantedRelation] = []
    deleted: list[str] = []
    used_subjects: set[int] = set()
    order = rng.permutation(len(candidates))
    fresh_names = _names(rng, n_new, taken)
    for idx in order:
        if len(planted) == cfg.n_planted:
            break
        s, o, a, b = candidates[int(idx)]
        if s in used_subjects:
            continue
        used_subjects.add(s)
        pattern = str(rng.choice(pattern_names, p=pattern_p))
        rel, tmpl_a, tmpl_b = PATTERNS[pattern]
        i = len(planted)
        hidden = i < n_hidden
        new_entity = hidden and i < n_new
        obj = fresh_names[i] if new_entity else labels[o]
        if new_entity:
            deleted.append(obj)
        planted.append(PlantedRelation(labels[s], rel, obj, (chunk_ids[a], chunk_ids[b]), pattern, hidden, new_entity))
        sentences[a].append(tmpl_a.format(s=labels[s]))
        sentences[b].append(tmpl_b.format(o=obj))
        mentions[a].add(s)
        if not new_entity:
            mentions[b].add(o)
    if len(planted) < cfg.n_planted:
        raise ConfigError("could not place every planted relation on a distinct subject")

    # assemble the index
    g = GraphIndex(provider.dim)
    for k, cid in enumerate(chunk_ids):
        order_k = rng.permutation(len(sentences[k]))
        g.add_chunk(cid, " ".join(sentences[k][int(i)] for i in order_k))
    for i, label in enumerate(labels):
        g.add_node(Node(f"e{i:04d}", ENTITY, label, provider.embed(label)))
    for k, cid in enumerate(chunk_ids):
        g.add_node(Node(cid, CHUNK, f"chunk {k}", provider.embed(g.chunks[cid])))
        for i in sorted(mentions[k]):
            g.add_edge(Edge(f"m{i:04d}-{k:04d}", f"e{i:04d}", cid, ENTITY_CHUNK))
    for n, ((s, rel, o), info) in enumerate(facts.items()):
        g.add_edge(Edge(
            f"f{n:05d}", f"e{s:04d}", f"e{o:04d}", FACT, float(len(info["chunks"])), rel,
            frozenset(chunk_ids[k] for k in info["chunks"]),
        ))
    for p in planted:
        if not p.hidden:
            s_id, o_id = g.find_entity(p.subject), g.find_entity(p.object)
            g.add_edge(Edge(f"p{len(g.edges):05d}", s_id, o_id, FACT, 1.0, p.relation, frozenset(p.citations)))
    syn_made, attempts = 0, 0
    while syn_made < cfg.n_synonyms and attempts < 100 * cfg.n_synonyms:
        attempts += 1
        k = int(rng.integers(n_c))
        a, b = (int(x) for x in rng.choice(pools[k], size=2, replace=False))
        if (a, b) in pair_seen:
            continue
        pair_seen.update({(a, b), (b, a)})
        g.add_edge(Edge(f"s{syn_made:04d}", f"e{a:04d}", f"e{b:04d}", SYNONYM, float(np.round(rng.uniform(0.6, 1.0), 3))))
        syn_made += 1

    truth = PlantedTruth(planted, deleted)
    return g, truth, truth.mock_table()


# ----------------------------------------------------------------------
# evaluation


def evaluate_recovery(augmented: GraphIndex, truth: PlantedTruth) -> dict:
    """Recall over hidden planted relations and precision of augmented edges."""
    keys = augmented.fact_keys()
    planted_keys = {p.key for p in truth.planted}
    hidden = truth.hidden
    found_hidden = sum(1 for p in hidden if p.key in keys)
    found_all = sum(1 for p in truth.planted if p.key in keys)
    added = [e for e in augmented.edges.values() if e.type == FACT and e.origin == "augment"]
    matching = sum(1 for e in added if augmented.fact_key(e) in planted_keys)
    return {
        "planted": len(truth.planted),
        "hidden": len(hidden),
        "recovered_hidden": found_hidden,
        "recall": found_hidden / len(hidden) if hidden else 0.0,
        "recall_all": found_all / len(truth.planted) if truth.planted else 0.0,
        "added_triples": len(added),
        "added_matching": matching,
        # vacuous when nothing was added: no false additions
        "precision": matching / len(added) if added else 1.0,
    }


def roc_auc(scores, labels) -> float:
    """Rank-statistic ROC-AUC; tied scores earn half credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    pos, neg = scores[labels == 1], scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("ROC-AUC needs both positive and negative examples")
    allv = np.concatenate([pos, neg])
    uniq, inverse, counts = np.unique(allv, return_inverse=True, return_counts=True)
    # average 1-based rank of each distinct value
    ends = np.cumsum(counts)
    avg_rank = ends - (counts - 1) / 2.0
    ranks = avg_rank[inverse]
    u = ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def scorer_auc(model, views) -> float:
    from .gnn import score_views

    views = list(views)
    return roc_auc(score_views(model, views), [v.label for v in views])


# ----------------------------------------------------------------------
# files


def save_truth(truth: PlantedTruth, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in truth.planted:
            rec = {"kind": "planted", "subject": p.subject, "relation": p.relation, "object": p.object,
                   "citations": list(p.citations), "pattern": p.pattern, "hidden": p.hidden,
                   "new_entity": p.new_entity}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        for label in truth.deleted_entities:
            fh.write(json.dumps({"kind": "deleted_entity", "label": label}, ensure_ascii=False) + "\n")


def load_truth(path) -> PlantedTruth:
    truth = PlantedTruth()
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if not raw.strip():
                continue
            rec = json.loads(raw)
            if rec["kind"] == "planted":
                truth.planted.append(PlantedRelation(
                    rec["subject"], rec["relation"], rec["object"], tuple(rec["citations"]),
                    rec.get("pattern", ""), bool(rec.get("hidden", True)), bool(rec.get("new_entity", False)),
                ))
            elif rec["kind"] == "deleted_entity":
                truth.deleted_entities.append(rec["label"])
    return truth


def save_planted(table, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in table:
            fh.write(json.dumps({"subject": p.subject, "relation": p.relation, "object": p.object,
                                 "citations": list(p.citations)}, ensure_ascii=False) + "\n")
