"""End-to-end orchestration: train the scorer, then augment a graph."""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .completion import (
    MergeReport,
    assemble_context,
    complete_requests,
    merge_outcomes,
)
from .config import PipelineConfig
from .corruption import epoch_stream
from .embedding import HttpEmbeddingProvider, MockEmbeddingProvider
from .gnn import MissingnessModel, TrainResult, init_model, score, train
from .graph import GraphIndex
from .sampler import SamplerConfig, eligible_roots, root_rng, sample_subgraph
from .selection import ScoredView, SelectionReport, select, selection_report

log = logging.getLogger(__name__)


@contextmanager
def stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0
        log.info("stage finished", extra={"stage": name, "seconds": round(timings[name], 4)})


def make_embedding_provider(cfg: PipelineConfig):
    e = cfg.embedding
    if e.provider == "mock":
        return MockEmbeddingProvider(dim=e.dim, seed=e.seed)
    return HttpEmbeddingProvider(e.base_url, model=e.model, token_env=e.token_env)


def train_scorer(g: GraphIndex, cfg: PipelineConfig, roots=None, on_epoch=None) -> TrainResult:
    model = init_model(cfg.model)
    epochs = epoch_stream(g, cfg.sampler, cfg.corruption, cfg.training.epochs, cfg.training.seed, roots=roots)
    return train(model, epochs, cfg.training, on_epoch=on_epoch)


def sample_candidates(g: GraphIndex, sampler_cfg: SamplerConfig, seed: int, roots=None):
    """One standard view per eligible root, each from its own seeded stream."""
    views = []
    for root in eligible_roots(g) if roots is None else roots:
        view = sample_subgraph(g, sampler_cfg, root, root_rng(seed, root))
        if view is not None:
            views.append(view)
    return views


def score_candidates(model: MissingnessModel | None, views) -> list[ScoredView]:
    out = []
    for v in views:
        if model is None:
            out.append(ScoredView(v, 0.0, 0.0))
        else:
            logit, m = score(model, v)
            out.append(ScoredView(v, m, logit))
    return out


@dataclass
class AugmentResult:
    selection: SelectionReport
    merge: MergeReport
    selected_roots: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    scores: list[float] = field(default_factory=list)
    candidate_roots: list[str] = field(default_factory=list)


def augment(
    g: GraphIndex,
    model: MissingnessModel | None,
    cfg: PipelineConfig,
    backend,
    provider=None,
) -> AugmentResult:
    """Sample, score, select, complete and merge, mutating ``g`` in place.

    All reading (sampling, scoring, prompt assembly) finishes before the
    first write, so scoring sees a fixed snapshot.
    """
    timings: dict[str, float] = {}
    provider = provider or make_embedding_provider(cfg)
    if model is None and cfg.selection.strategy == "gnn":
        raise ValueError("the gnn strategy needs a trained model")

    with stage("sample", timings):
        views = sample_candidates(g, cfg.sampler, cfg.seed)
    with stage("score", timings):
        scored = score_candidates(model, views)
    with stage("select", timings):
        rng = np.random.default_rng([cfg.seed, 7])
        chosen = select(scored, cfg.selection, rng)
        sel_report = selection_report(chosen, scored, cfg.selection)
    with stage("assemble", timings):
        requests = [assemble_context(g, c.view, cfg.completion.max_evidence) for c in chosen]
    with stage("complete", timings):
        outcomes = complete_requests(requests, backend, cfg.completion.parallelism)
    with stage("merge", timings):
        report = merge_outcomes(g, outcomes, provider=provider)
    return AugmentResult(
        selection=sel_report,
        merge=report,
        selected_roots=[c.root for c in chosen],
        timings=timings,
        scores=[c.score for c in scored],
        candidate_roots=[c.root for c in scored],
    )
