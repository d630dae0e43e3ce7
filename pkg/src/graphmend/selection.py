"""Budgeted, overlap-aware choice of which views go to the completion backend."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sampler import SubgraphView

STRATEGIES = ("gnn", "random")


@dataclass(frozen=True)
class SelectionConfig:
    threshold: float = 0.50
    max_overlap: float = 0.5
    budget: int = 100
    strategy: str = "gnn"

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise ValueError("threshold must lie in [0, 1]")
        if not 0 <= self.max_overlap <= 1:
            raise ValueError("max_overlap must lie in [0, 1]")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")


@dataclass(frozen=True)
class ScoredView:
    view: SubgraphView
    score: float
    logit: float = 0.0

    @property
    def root(self) -> str:
        return self.view.root


def jaccard(a, b) -> float:
    """|A & B| / |A | B| over node sets; accepts views or plain sets."""
    sa = a.node_set if isinstance(a, SubgraphView) else set(a)
    sb = b.node_set if isinstance(b, SubgraphView) else set(b)
    if not sa or not sb:
        raise ValueError("jaccard needs nonempty node sets")
    return len(sa & sb) / len(sa | sb)


def ranked(candidates):
    return sorted(candidates, key=lambda c: (-c.score, c.root))


def _greedy(candidates, cfg: SelectionConfig):
    accepted: list[ScoredView] = []
    skipped = 0
    for cand in ranked(candidates):
        if len(accepted) == cfg.budget or cand.score < cfg.threshold:
            break
        if any(jaccard(cand.view, prev.view) > cfg.max_overlap for prev in accepted):
            skipped += 1
            continue
        accepted.append(cand)
    return accepted, skipped


def select(candidates, cfg: SelectionConfig, rng: np.random.Generator | None = None) -> list[ScoredView]:
    """Pick up to ``cfg.budget`` candidates.

    ``gnn``: walk candidates by descending score (ties by root id), keep those
    at or above the threshold whose node overlap with every kept view is at
    most ``max_overlap``. ``random``: a uniform draw that ignores both.
    Either way a smaller budget selects a prefix of a larger one.
    """
    candidates = list(candidates)
    if cfg.strategy == "random":
        rng = np.random.default_rng() if rng is None else rng
        order = rng.permutation(len(candidates))
        return [candidates[int(i)] for i in order[: cfg.budget]]
    return _greedy(candidates, cfg)[0]


@dataclass
class SelectionReport:
    strategy: str
    scored: int = 0
    above_threshold: int = 0
    overlap_skipped: int = 0
    budget_truncated: int = 0
    selected: int = 0
    histogram: list[int] = field(default_factory=lambda: [0] * 10)
    bin_edges: list[float] = field(default_factory=lambda: np.linspace(0, 1, 11).tolist())

    def as_dict(self):
        return dict(self.__dict__)


def selection_report(selected, candidates, cfg: SelectionConfig) -> SelectionReport:
    candidates = list(candidates)
    report = SelectionReport(cfg.strategy, scored=len(candidates), selected=len(selected))
    if not candidates:
        return report
    scores = np.array([c.score for c in candidates])
    report.histogram = np.histogram(scores, bins=10, range=(0.0, 1.0))[0].tolist()
    report.above_threshold = int(np.sum(scores >= cfg.threshold))
    if cfg.strategy == "gnn":
        _, report.overlap_skipped = _greedy(candidates, cfg)
        report.budget_truncated = report.above_threshold - report.selected - report.overlap_skipped
    return report
