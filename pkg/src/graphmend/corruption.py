"""Self-supervised training views: intact negatives and corrupted positives."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyEpochError, NotCorruptible
from .graph import FACT, GraphIndex
from .sampler import (
    SamplerConfig,
    SubgraphView,
    eligible_roots,
    sample_intact_view,
    sample_subgraph,
)


@dataclass(frozen=True)
class CorruptionConfig:
    edge_mask_ratio: float = 0.20
    node_delete_ratio: float = 0.08
    min_remaining_fact_edges: int = 1
    roots_per_epoch: int = 128

    def __post_init__(self):
        for name in ("edge_mask_ratio", "node_delete_ratio"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie strictly inside (0, 1)")
        if self.min_remaining_fact_edges < 1:
            raise ValueError("min_remaining_fact_edges must be >= 1")
        if self.roots_per_epoch < 1:
            raise ValueError("roots_per_epoch must be >= 1")


def round_half_up(x: float) -> int:
    # 1e-9 absorbs float noise such as 0.2 * 50 == 10.000000000000002
    return int(math.floor(x + 0.5 + 1e-9))


def target_count(ratio: float, n: int) -> int:
    return max(1, round_half_up(ratio * n))


def mask_fact_edges(view: SubgraphView, cfg: CorruptionConfig, rng: np.random.Generator) -> SubgraphView:
    facts = sorted(view.fact_edges)
    floor = cfg.min_remaining_fact_edges
    if len(facts) <= floor:
        raise NotCorruptible(f"{len(facts)} fact edges, floor {floor}")
    m = min(target_count(cfg.edge_mask_ratio, len(facts)), len(facts) - floor)
    picked = rng.choice(len(facts), size=m, replace=False)
    masked = {facts[i] for i in picked}
    return replace(
        view,
        edges=tuple(e for e in view.edges if e not in masked),
        label=1,
        masked_edges=view.masked_edges + tuple(e for e in facts if e in masked),
    )


def delete_entity_nodes(view: SubgraphView, cfg: CorruptionConfig, rng: np.random.Generator) -> SubgraphView:
    g = view.graph
    floor = cfg.min_remaining_fact_edges
    edges = list(view.edges)
    fact_touch: dict[str, int] = {}
    for eid in edges:
        e = g.edges[eid]
        if e.type == FACT:
            for end in {e.u, e.v}:
                fact_touch[end] = fact_touch.get(end, 0) + 1
    eligible = sorted(n for n in view.nodes if n != view.root and fact_touch.get(n))
    if not eligible:
        raise NotCorruptible("no non-root node touches a fact edge")
    k = target_count(cfg.node_delete_ratio, len(eligible))

    alive = set(view.nodes)
    n_fact = sum(1 for eid in edges if g.edges[eid].type == FACT)
    deleted, dropped = [], []
    for i in rng.permutation(len(eligible)):
        if len(deleted) == k:
            break
        node = eligible[int(i)]
        incident = [eid for eid in edges if node in (g.edges[eid].u, g.edges[eid].v)]
        lost_facts = sum(1 for eid in incident if g.edges[eid].type == FACT)
        if lost_facts == 0 or n_fact - lost_facts < floor:
            continue
        alive.discard(node)
        gone = set(incident)
        edges = [eid for eid in edges if eid not in gone]
        n_fact -= lost_facts
        deleted.append(node)
        dropped.extend(incident)
    if not deleted:
        raise NotCorruptible("every candidate deletion would break the fact-edge floor")
    return replace(
        view,
        nodes=tuple(n for n in view.nodes if n in alive),
        edges=tuple(edges),
        label=1,
        deleted_nodes=view.deleted_nodes + tuple(deleted),
        dropped_edges=view.dropped_edges + tuple(dropped),
    )


OPERATORS = (mask_fact_edges, delete_entity_nodes)


def corrupt(view: SubgraphView, cfg: CorruptionConfig, rng: np.random.Generator) -> SubgraphView:
    """Apply one operator chosen uniformly, falling back to the other."""
    first = int(rng.integers(2))
    try:
        return OPERATORS[first](view, cfg, rng)
    except NotCorruptible:
        return OPERATORS[1 - first](view, cfg, rng)


def restore(view: SubgraphView) -> SubgraphView:
    """Undo corruption using the view's own record."""
    g = view.graph
    nodes = set(view.nodes) | set(view.deleted_nodes)
    edges = set(view.edges) | set(view.masked_edges) | set(view.dropped_edges)
    return replace(
        view,
        nodes=tuple(sorted(nodes)),
        edges=tuple(sorted(e for e in edges if g.edges[e].u in nodes and g.edges[e].v in nodes)),
        label=None,
        masked_edges=(),
        deleted_nodes=(),
        dropped_edges=(),
    )


def build_training_epoch(
    g: GraphIndex,
    sampler_cfg: SamplerConfig,
    cfg: CorruptionConfig,
    rng: np.random.Generator,
    roots: list[str] | None = None,
) -> list[SubgraphView]:
    """One epoch of paired views: per root, an intact (y=0) and a corrupted (y=1) view.

    Roots whose sampling fails a filter, or that neither operator can corrupt,
    are dropped rather than resampled.
    """
    pool = eligible_roots(g) if roots is None else sorted(roots)
    if not pool:
        raise EmptyEpochError("graph has no eligible roots")
    n = cfg.roots_per_epoch
    idx = rng.choice(len(pool), size=n, replace=len(pool) < n)
    views = []
    for i in idx:
        root = pool[int(i)]
        intact = sample_intact_view(g, sampler_cfg, root, rng)
        base = sample_subgraph(g, sampler_cfg, root, rng)
        if intact is None or base is None:
            continue
        try:
            positive = corrupt(base, cfg, rng)
        except NotCorruptible:
            continue
        views.append(intact)
        views.append(positive)
    if not views:
        raise EmptyEpochError("no root produced a usable intact/corrupted pair")
    return views


def epoch_stream(g, sampler_cfg, cfg, n_epochs: int, seed: int, roots=None):
    """Yield ``n_epochs`` freshly sampled epochs from one seeded generator."""
    rng = np.random.default_rng(seed)
    for _ in range(n_epochs):
        yield build_training_epoch(g, sampler_cfg, cfg, rng, roots=roots)
