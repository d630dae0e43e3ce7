"""Root selection and weighted random-walk subgraph sampling.

Walks move only over entity-entity (Fact / Synonym) edges. The weight used
for a transition is ``min(w, clip) * multiplier[edge type]``; the next node is
drawn proportionally. A walk never steps straight back to the node it just
left, and stops early when no other neighbor exists.
"""

from __future__ import annotations

import bisect
import itertools
import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyDistributionError
from .graph import ENTITY, ENTITY_EDGE_TYPES, FACT, GraphIndex


@dataclass(frozen=True)
class SamplerConfig:
    clip: float = 5.0
    alpha_fact: float = 1.0
    alpha_synonym: float = 0.5
    walks_per_root: int = 8
    walk_length: int = 4
    min_nodes: int = 5
    min_fact_edges: int = 1
    intact_expansion_factor: float = 2.0

    def __post_init__(self):
        for name in ("clip", "alpha_fact", "alpha_synonym"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("walks_per_root", "walk_length", "min_nodes", "min_fact_edges"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not self.alpha_fact > self.alpha_synonym:
            raise ValueError("alpha_fact must exceed alpha_synonym")
        if self.intact_expansion_factor < 1:
            raise ValueError("intact_expansion_factor must be >= 1")

    def multiplier(self, edge_type: str) -> float:
        return self.alpha_fact if edge_type == FACT else self.alpha_synonym


@dataclass(frozen=True)
class SubgraphView:
    """A root-anchored region of a graph index.

    ``nodes`` and ``edges`` keep sampling order; consumers that need a
    canonical order sort them. ``label`` is 1 for corrupted, 0 for intact,
    None for unlabeled inference candidates. Corruption bookkeeping lives in
    ``masked_edges``, ``deleted_nodes`` and ``dropped_edges`` (edges that
    vanished together with a deleted node).
    """

    graph: GraphIndex = field(repr=False, compare=False)
    root: str
    nodes: tuple[str, ...]
    edges: tuple[str, ...]
    label: int | None = None
    masked_edges: tuple[str, ...] = ()
    deleted_nodes: tuple[str, ...] = ()
    dropped_edges: tuple[str, ...] = ()

    @property
    def fact_edges(self) -> tuple[str, ...]:
        return tuple(e for e in self.edges if self.graph.edges[e].type == FACT)

    @property
    def node_set(self) -> frozenset[str]:
        return frozenset(self.nodes)

    @property
    def corrupted(self) -> bool:
        return bool(self.masked_edges or self.deleted_nodes)

    def with_label(self, label):
        return replace(self, label=label)


def is_informative_label(label: str) -> bool:
    """False for labels with no letters once digits, punctuation and signs go."""
    return any(ch.isalpha() for ch in label)


def eligible_roots(g: GraphIndex) -> list[str]:
    return sorted(
        n.id
        for n in g.nodes.values()
        if n.type == ENTITY and is_informative_label(n.label) and g.entity_neighbors(n.id)
    )


def transition_distribution(
    g: GraphIndex, cfg: SamplerConfig, u: str, exclude: str | None = None
) -> dict[str, float]:
    """Probability of stepping from ``u`` to each entity neighbor.

    Parallel edges to the same neighbor add their weights. ``exclude`` drops
    one neighbor (the walk's previous node) before normalizing.
    """
    mass: dict[str, float] = {}
    for nbr, eid in g.entity_neighbors(u):
        if nbr == u or nbr == exclude:
            continue
        e = g.edges[eid]
        mass[nbr] = mass.get(nbr, 0.0) + min(e.weight, cfg.clip) * cfg.multiplier(e.type)
    total = math.fsum(mass.values())
    if not mass or total <= 0:
        raise EmptyDistributionError(f"{u!r} has no entity neighbors to step to")
    return {v: mass[v] / total for v in sorted(mass)}


def random_walk(
    g: GraphIndex, cfg: SamplerConfig, root: str, rng: np.random.Generator, length: int | None = None
) -> list[str]:
    """Return the visited entity sequence, starting with ``root``."""
    length = cfg.walk_length if length is None else length
    walk = [root]
    prev = None
    for _ in range(length):
        cur = walk[-1]
        try:
            dist = transition_distribution(g, cfg, cur, exclude=prev)
        except EmptyDistributionError:
            break
        targets = list(dist)
        cumulative = list(itertools.accumulate(dist.values()))
        i = bisect.bisect_right(cumulative, rng.random() * cumulative[-1])
        nxt = targets[min(i, len(targets) - 1)]
        prev = cur
        walk.append(nxt)
    return walk


def induced_edges(g: GraphIndex, nodes) -> tuple[str, ...]:
    """Fact and Synonym edges with both endpoints in ``nodes``."""
    node_set = set(nodes)
    out = []
    seen = set()
    for u in nodes:
        for t in ENTITY_EDGE_TYPES:
            for v, eid in g.neighbors(u, t):
                if v in node_set and eid not in seen:
                    seen.add(eid)
                    out.append(eid)
    return tuple(out)


def _sample(g, cfg, root, rng, walks, length):
    order = {root: None}
    for _ in range(walks):
        for node in random_walk(g, cfg, root, rng, length=length):
            order.setdefault(node, None)
    nodes = tuple(order)
    edges = induced_edges(g, nodes)
    n_fact = sum(1 for e in edges if g.edges[e].type == FACT)
    if len(nodes) < cfg.min_nodes or n_fact < cfg.min_fact_edges:
        return None
    return SubgraphView(g, root, nodes, edges)


def sample_subgraph(g: GraphIndex, cfg: SamplerConfig, root: str, rng: np.random.Generator):
    """Standard candidate view around ``root``, or None if it fails the filters."""
    return _sample(g, cfg, root, rng, cfg.walks_per_root, cfg.walk_length)


def sample_intact_view(g: GraphIndex, cfg: SamplerConfig, root: str, rng: np.random.Generator):
    """Wider exploration used for negative (intact) training examples."""
    k = cfg.intact_expansion_factor
    view = _sample(
        g, cfg, root, rng,
        math.ceil(cfg.walks_per_root * k),
        math.ceil(cfg.walk_length * k),
    )
    return None if view is None else view.with_label(0)


def root_rng(seed: int, root: str) -> np.random.Generator:
    """Independent stream per (seed, root), stable under root ordering."""
    return np.random.default_rng([seed, zlib.crc32(root.encode("utf-8"))])
