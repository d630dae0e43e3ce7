"""Evidence-grounded completion of selected views and merge into the index.

A selected view becomes a :class:`CompletionRequest` (root, entities, known
triples, evidence chunks). The request is rendered to a prompt, sent to a
backend, and the reply is parsed into proposals of the form::

    (subject | relation | object) [cites: c1, c2]

Only proposals citing evidence that was actually in the request survive
validation; survivors are upserted into the graph.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

from .embedding import EmbeddingProvider
from .errors import BackendError, EmbeddingError, IntegrityError
from .graph import GraphIndex, stats, triple_key
from .sampler import SubgraphView

log = logging.getLogger(__name__)

REJECT_REASONS = ("no_citation", "unknown_chunk", "duplicate", "malformed")
DEFAULT_MAX_EVIDENCE = 12


@dataclass(frozen=True)
class CompletionRequest:
    root_id: str
    root_label: str
    entities: tuple[str, ...]
    known_triples: tuple[tuple[str, str, str, tuple[str, ...]], ...]
    evidence: tuple[tuple[str, str], ...]

    @property
    def evidence_ids(self) -> frozenset[str]:
        return frozenset(cid for cid, _ in self.evidence)


@dataclass(frozen=True)
class ProposedTriple:
    subject: str
    relation: str
    object: str
    citations: frozenset[str] = frozenset()

    @property
    def key(self):
        return triple_key(self.subject, self.relation, self.object)


# ----------------------------------------------------------------------
# context and prompt


def assemble_context(g: GraphIndex, view: SubgraphView, max_evidence: int = DEFAULT_MAX_EVIDENCE) -> CompletionRequest:
    """Collect the view's facts and the chunks they were extracted from.

    Evidence follows first-seen order over fact edges sorted by id. When more
    than ``max_evidence`` chunks are cited, the most-cited ones are kept.
    """
    facts = sorted(view.fact_edges)
    if not facts:
        raise ValueError(f"view rooted at {view.root!r} has no fact edges")
    order: dict[str, int] = {}
    for eid in facts:
        for cid in sorted(g.edges[eid].provenance):
            if cid not in g.chunks:
                raise IntegrityError(f"edge {eid!r} cites missing chunk {cid!r}")
            order[cid] = order.get(cid, 0) + 1
    chunk_ids = list(order)
    if len(chunk_ids) > max_evidence:
        rank = sorted(range(len(chunk_ids)), key=lambda i: (-order[chunk_ids[i]], i))
        keep = set(sorted(rank[:max_evidence]))
        chunk_ids = [cid for i, cid in enumerate(chunk_ids) if i in keep]
    visible = set(chunk_ids)

    known = []
    for eid in facts:
        e = g.edges[eid]
        known.append((
            g.nodes[e.u].label, e.relation, g.nodes[e.v].label,
            tuple(sorted(e.provenance & visible)),
        ))
    return CompletionRequest(
        root_id=view.root,
        root_label=g.nodes[view.root].label,
        entities=tuple(sorted({g.nodes[n].label for n in view.nodes})),
        known_triples=tuple(known),
        evidence=tuple((cid, g.chunks[cid]) for cid in chunk_ids),
    )


INSTRUCTIONS = """\
Propose only relations that the evidence passages state directly or support
unambiguously, including relations whose support is spread over several
passages. Do not repeat known triples. A new entity may appear only as the
subject or object of a proposed triple. Every triple must cite the passages
that support it by their bracketed identifiers; triples without valid
citations are discarded.

Write one triple per line and nothing else, exactly in this form:
(subject | relation | object) [cites: <passage id>, <passage id>]
If the passages support nothing new, write NONE."""


def _one_line(text: str) -> str:
    return " ".join(text.split())


def render_prompt(req: CompletionRequest) -> str:
    lines = ["Recover relations missing from a region of a knowledge graph.", ""]
    lines += ["### Root entity", _one_line(req.root_label), ""]
    lines += ["### Entities in region"] + [f"- {_one_line(e)}" for e in req.entities] + [""]
    lines.append("### Known triples")
    if req.known_triples:
        lines += [f"- ({_one_line(s)} | {_one_line(r)} | {_one_line(o)})" for s, r, o, _ in req.known_triples]
    else:
        lines.append("(none)")
    lines.append("")
    lines.append("### Evidence")
    lines += [f"[{cid}] {_one_line(text)}" for cid, text in req.evidence]
    lines += ["", "### Instructions", INSTRUCTIONS, ""]
    return "\n".join(lines)


_EVIDENCE_LINE = re.compile(r"^\[([^\]\s]+)\] ")


def prompt_evidence_ids(prompt: str) -> list[str]:
    ids, inside = [], False
    for line in prompt.splitlines():
        if line.startswith("### "):
            inside = line == "### Evidence"
            continue
        m = _EVIDENCE_LINE.match(line) if inside else None
        if m:
            ids.append(m.group(1))
    return ids


# ----------------------------------------------------------------------
# backends


class CompletionBackend(Protocol):
    def complete(self, prompt: str) -> str: ...


def format_triple(subject, relation, obj, citations) -> str:
    return f"({subject} | {relation} | {obj}) [cites: {', '.join(citations)}]"


@dataclass(frozen=True)
class PlantedTriple:
    subject: str
    relation: str
    object: str
    citations: tuple[str, ...]


class MockBackend:
    """Answers from a table of planted relations.

    A planted triple is emitted only when every chunk it cites is visible in
    the prompt's evidence section.
    """

    def __init__(self, planted):
        self.planted = list(planted)
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.calls += 1
        visible = set(prompt_evidence_ids(prompt))
        lines = [
            format_triple(p.subject, p.relation, p.object, p.citations)
            for p in self.planted
            if set(p.citations) <= visible
        ]
        return "\n".join(lines) if lines else "NONE"


def load_planted(path) -> list[PlantedTriple]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if raw.strip():
                rec = json.loads(raw)
                out.append(PlantedTriple(rec["subject"], rec["relation"], rec["object"], tuple(rec["citations"])))
    return out


class HttpBackend:
    """Chat-completion client with retries and exponential backoff.

    Retries on transport errors, 429 and 5xx; other 4xx fail at once.
    Token usage reported by the server is summed in ``usage``.
    """

    def __init__(
        self,
        base_url: str,
        model: str = "",
        token_env: str = "COMPLETION_API_TOKEN",
        timeout: float = 120.0,
        attempts: int = 3,
        backoff: float = 1.0,
        temperature: float = 0.0,
        client=None,
        sleep=time.sleep,
    ):
        import httpx

        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.token = os.environ.get(token_env, "")
        self.attempts = attempts
        self.backoff = backoff
        self.temperature = temperature
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep
        self._lock = threading.Lock()
        self.usage = Counter()
        self.calls = 0

    def complete(self, prompt: str) -> str:
        import httpx

        body = {
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        if self.model:
            body["model"] = self.model
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        last = None
        for attempt in range(self.attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            with self._lock:
                self.calls += 1
            try:
                resp = self._client.post(self.url, json=body, headers=headers)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                data = resp.json()
                text = data["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"unexpected response body: {exc}") from exc
            usage = data.get("usage") or {}
            with self._lock:
                for k in ("prompt_tokens", "completion_tokens"):
                    if isinstance(usage.get(k), int):
                        self.usage[k] += usage[k]
            return text or ""
        raise BackendError(f"gave up after {self.attempts} attempts ({last})")


def call_backend(backend: CompletionBackend, prompt: str) -> str:
    return backend.complete(prompt)


# ----------------------------------------------------------------------
# parsing and validation

_TRIPLE_LINE = re.compile(
    r"^(?:[-*]\s+|\d+[.)]\s+)?"
    r"\((?P<s>[^|]+)\|(?P<r>[^|]+)\|(?P<o>[^|]+)\)"
    r"\s*(?:\[\s*cites?\s*:(?P<c>[^\]]*)\])?\s*$"
)


def parse_response(text: str) -> tuple[list[ProposedTriple], int]:
    """Return (proposals, malformed line count). Never raises on bad input."""
    proposals, malformed = [], 0
    for raw in (text or "").splitlines():
        line = raw.strip()
        if not line or line.upper() == "NONE":
            continue
        m = _TRIPLE_LINE.match(line)
        if not m:
            malformed += 1
            continue
        s, r, o = (_one_line(m.group(k)) for k in "sro")
        if not (s and r and o):
            malformed += 1
            continue
        cites = frozenset(c.strip() for c in (m.group("c") or "").split(",") if c.strip())
        proposals.append(ProposedTriple(s, r, o, cites))
    return proposals, malformed


def validate(proposals, req: CompletionRequest):
    """Split proposals into (validated, [(proposal, reason), ...])."""
    allowed = req.evidence_ids
    validated, rejected, seen = [], [], set()
    for p in proposals:
        if not p.citations:
            rejected.append((p, "no_citation"))
        elif not p.citations <= allowed:
            rejected.append((p, "unknown_chunk"))
        elif p.key[0] == p.key[2]:
            rejected.append((p, "malformed"))
        elif p.key in seen:
            rejected.append((p, "duplicate"))
        else:
            seen.add(p.key)
            validated.append(p)
    return validated, rejected


# ----------------------------------------------------------------------
# merge


@dataclass
class MergeReport:
    received: int = 0
    validated: int = 0
    rejected: dict[str, int] = field(default_factory=lambda: {r: 0 for r in REJECT_REASONS})
    nodes_added: int = 0
    edges_added: int = 0
    triples_added: int = 0
    duplicates: int = 0
    deferred: int = 0
    backend_errors: int = 0

    @property
    def rejected_total(self) -> int:
        return sum(self.rejected.values())

    def record_validation(self, validated, rejected, malformed: int = 0) -> None:
        self.validated += len(validated)
        for _, reason in rejected:
            self.rejected[reason] += 1
        self.rejected["malformed"] += malformed
        self.received += len(validated) + len(rejected) + malformed

    def absorb(self, other: "MergeReport") -> None:
        for name in ("received", "validated", "nodes_added", "edges_added", "triples_added",
                     "duplicates", "deferred", "backend_errors"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        for reason, n in other.rejected.items():
            self.rejected[reason] = self.rejected.get(reason, 0) + n

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["rejected"] = dict(self.rejected)
        d["rejected_total"] = self.rejected_total
        return d


def merge(g: GraphIndex, validated, provider: EmbeddingProvider | None = None, origin: str = "augment") -> MergeReport:
    """Upsert validated proposals; citations become edge provenance.

    Node/edge/triple counts come from a stats diff, so they match the graph
    exactly. A proposal whose new entity cannot be embedded is deferred and
    leaves the graph untouched.
    """
    validated = list(validated)
    report = MergeReport(received=len(validated), validated=len(validated))
    with g.write_lock:
        before = stats(g)
        for p in validated:
            existed = g.find_fact(p.subject, p.relation, p.object) is not None
            try:
                g.upsert_triple(p.subject, p.relation, p.object, p.citations, provider=provider, origin=origin)
            except EmbeddingError as exc:
                log.warning("deferred %s: %s", p.key, exc)
                report.deferred += 1
                continue
            if existed:
                report.duplicates += 1
        delta = stats(g).delta(before)
    report.nodes_added = delta["added_nodes"]
    report.edges_added = delta["added_edges"]
    report.triples_added = delta["added_triples"]
    return report


@dataclass
class ViewOutcome:
    request: CompletionRequest
    proposals: list[ProposedTriple] = field(default_factory=list)
    validated: list[ProposedTriple] = field(default_factory=list)
    rejected: list = field(default_factory=list)
    malformed: int = 0
    error: str | None = None


def complete_request(req: CompletionRequest, backend: CompletionBackend) -> ViewOutcome:
    out = ViewOutcome(req)
    try:
        text = call_backend(backend, render_prompt(req))
    except BackendError as exc:
        out.error = str(exc)
        return out
    out.proposals, out.malformed = parse_response(text)
    out.validated, out.rejected = validate(out.proposals, req)
    return out


def complete_requests(requests, backend: CompletionBackend, parallelism: int = 4) -> list[ViewOutcome]:
    """Run backend calls concurrently; results keep the input order."""
    requests = list(requests)
    if parallelism <= 1 or len(requests) <= 1:
        return [complete_request(r, backend) for r in requests]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(lambda r: complete_request(r, backend), requests))


def merge_outcomes(g: GraphIndex, outcomes, provider=None) -> MergeReport:
    """Single-writer merge of per-view outcomes, ordered by root id."""
    total = MergeReport()
    for out in sorted(outcomes, key=lambda o: o.request.root_id):
        if out.error is not None:
            total.backend_errors += 1
            continue
        part = merge(g, out.validated, provider=provider)
        part.received = part.validated = 0
        part.record_validation(out.validated, out.rejected, out.malformed)
        total.absorb(part)
    return total
