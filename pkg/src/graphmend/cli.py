"""Command-line entry point: ``graphmend {synth,ingest,stats,train,augment,eval,config}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .completion import HttpBackend, MockBackend, load_planted
from .config import PipelineConfig, dump_config, load_config, parse_override
from .errors import (
    BackendError, CheckpointError, ConfigError, EmbeddingError, EmptyEpochError,
    GraphFormatError, IntegrityError, TrainingError,
)
from .gnn import init_model, load_checkpoint, save_checkpoint
from .graph import load_graph, save_graph, stats
from .pipeline import augment, make_embedding_provider, train_scorer
from .synth import SynthConfig, evaluate_recovery, generate, load_truth, save_planted, save_truth

log = logging.getLogger("graphmend")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 3
EXIT_INTEGRITY = 4
EXIT_IO = 5


class JsonLineFormatter(logging.Formatter):
    _skip = set(vars(logging.makeLogRecord({})))

    def format(self, record):
        rec = {
            "ts": round(record.created, 3),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        rec.update({k: v for k, v in vars(record).items() if k not in self._skip and k != "message"})
        return json.dumps(rec, default=str)


def _setup_logging(log_path, verbose):
    root = logging.getLogger("graphmend")
    root.handlers.clear()
    root.setLevel(logging.INFO)
    err = logging.StreamHandler(sys.stderr)
    err.setLevel(logging.INFO if verbose else logging.WARNING)
    err.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(err)
    if log_path:
        fh = logging.FileHandler(log_path, encoding="utf-8")
        fh.setFormatter(JsonLineFormatter())
        root.addHandler(fh)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _config(args) -> PipelineConfig:
    overrides = dict(parse_override(s) for s in (getattr(args, "set", None) or []))
    for flag, dotted in (
        ("seed", "seed"),
        ("epochs", "training.epochs"),
        ("budget", "selection.budget"),
        ("threshold", "selection.threshold"),
        ("strategy", "selection.strategy"),
        ("max_overlap", "selection.max_overlap"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[dotted] = value
    return load_config(getattr(args, "config", None), overrides)


def _print(args, human: str, record: dict):
    if getattr(args, "json", False):
        print(json.dumps(record, sort_keys=True))
    else:
        print(human)


def _stats_text(s, title="graph") -> str:
    rows = [f"{title}:"] + [f"  {k:<10} {v:>8}" for k, v in s.as_dict().items()]
    return "\n".join(rows)


# ----------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    cfg = SynthConfig(
        n_entities=args.entities, n_chunks=args.chunks, n_planted=args.planted,
        hide_fraction=args.hide_fraction, seed=args.seed,
    )
    g, truth, table = generate(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_graph(g, out / "graph.jsonl")
    save_truth(truth, out / "truth.jsonl")
    save_planted(table, out / "planted.jsonl")
    s = stats(g)
    _print(args, _stats_text(s) + f"\nplanted: {len(truth.planted)} (hidden {len(truth.hidden)})",
           {"stats": s.as_dict(), "planted": len(truth.planted), "hidden": len(truth.hidden), "out_dir": str(out)})
    return EXIT_OK


def cmd_ingest(args):
    cfg = _config(args)
    provider = make_embedding_provider(cfg)
    g = load_graph(args.graph, provider=provider)
    missing = g.features_computed
    g.check_integrity()
    out = args.out or args.graph
    save_graph(g, out)
    s = stats(g)
    _print(args, _stats_text(s) + f"\nfeatures computed: {missing}\nwritten: {out}",
           {"stats": s.as_dict(), "features_computed": missing, "out": str(out)})
    return EXIT_OK


def cmd_stats(args):
    g = load_graph(args.graph)
    s = stats(g)
    record = {"stats": s.as_dict()}
    text = _stats_text(s)
    if args.base:
        base = stats(load_graph(args.base))
        record["base"] = base.as_dict()
        record["delta"] = s.delta(base)
        text += "\n" + "\n".join(f"  {k:<16} {v:>8}" for k, v in s.delta(base).items())
    _print(args, text, record)
    return EXIT_OK


def cmd_train(args):
    from .report import plot_loss_curve, write_jsonl

    cfg = _config(args)
    g = load_graph(args.graph, provider=make_embedding_provider(cfg))
    if g.d != cfg.model.input_dim:
        cfg = replace(cfg, model=replace(cfg.model, input_dim=g.d))
    ckpt = Path(args.checkpoint)
    t0 = time.perf_counter()

    def on_epoch(epoch, loss):
        log.info("epoch", extra={"stage": "train", "epoch": epoch, "loss": loss,
                                 "seconds": round(time.perf_counter() - t0, 3)})

    if cfg.training.epochs == 0:
        model, losses = init_model(cfg.model), []
    else:
        result = train_scorer(g, cfg, on_epoch=on_epoch)
        model, losses = result.model, result.losses
    save_checkpoint(model, ckpt)
    loss_path = Path(args.loss_out or ckpt.with_suffix(".loss.jsonl"))
    write_jsonl(loss_path, [{"epoch": i, "loss": v} for i, v in enumerate(losses)])
    figure = None
    if losses and not args.no_figures:
        figure = plot_loss_curve(losses, loss_path.with_suffix(".png"))
    _print(
        args,
        f"trained {len(losses)} epochs, {model.parameter_count()} parameters\n"
        + (f"loss {losses[0]:.4f} -> {losses[-1]:.4f}\n" if losses else "")
        + f"checkpoint: {ckpt}\nloss curve: {loss_path}" + (f"\nfigure: {figure}" if figure else ""),
        {"epochs": len(losses), "parameters": model.parameter_count(), "losses": losses,
         "checkpoint": str(ckpt), "loss_file": str(loss_path), "figure": str(figure) if figure else None},
    )
    return EXIT_OK


def _backend(cfg: PipelineConfig, args):
    b = cfg.backend
    if b.kind == "mock":
        if not args.planted:
            raise ConfigError("the mock backend needs --planted FILE")
        return MockBackend(load_planted(args.planted))
    return HttpBackend(b.base_url, model=b.model, token_env=b.token_env, timeout=b.timeout,
                       attempts=b.attempts, backoff=b.backoff)


def cmd_augment(args):
    from .report import plot_score_histogram, write_jsonl

    cfg = _config(args)
    provider = make_embedding_provider(cfg)
    g = load_graph(args.graph, provider=provider)
    model = None
    if cfg.selection.strategy == "gnn" or args.checkpoint:
        if not args.checkpoint:
            raise ConfigError("the gnn strategy needs --checkpoint")
        model = load_checkpoint(args.checkpoint, expected_input_dim=g.d)
    backend = _backend(cfg, args)
    before = stats(g)
    result = augment(g, model, cfg, backend, provider=provider)
    after = stats(g)
    g.check_integrity()
    out = Path(args.out)
    save_graph(g, out)

    report_dir = Path(args.report_dir) if args.report_dir else out.parent
    report_dir.mkdir(parents=True, exist_ok=True)
    stem = out.name.split(".")[0]
    write_jsonl(report_dir / f"{stem}.selection.jsonl", [{"kind": "selection", **result.selection.as_dict()}])
    write_jsonl(report_dir / f"{stem}.merge.jsonl", [{"kind": "merge", **result.merge.as_dict()}])
    figure = None
    if not args.no_figures:
        chosen = set(result.selected_roots)
        sel_scores = [s for s, r in zip(result.scores, result.candidate_roots) if r in chosen]
        figure = plot_score_histogram(result.scores, cfg.selection.threshold,
                                      report_dir / f"{stem}.scores.png", sel_scores)
    inputs = {str(args.graph): file_digest(args.graph)}
    if args.checkpoint:
        inputs[str(args.checkpoint)] = file_digest(args.checkpoint)
    if args.planted:
        inputs[str(args.planted)] = file_digest(args.planted)
    manifest = {
        "version": __version__,
        "command": "augment",
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "config": cfg.as_dict(),
        "inputs": inputs,
        "output": {str(out): file_digest(out)},
        "stats_before": before.as_dict(),
        "stats_after": after.as_dict(),
        "selection": result.selection.as_dict(),
        "merge": result.merge.as_dict(),
        "timings": result.timings,
        "backend_calls": getattr(backend, "calls", None),
        "backend_usage": dict(getattr(backend, "usage", {}) or {}),
        "figures": [str(figure)] if figure else [],
    }
    manifest_path = report_dir / f"{stem}.manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=list), encoding="utf-8")
    m, sel = result.merge, result.selection
    _print(
        args,
        f"candidates {sel.scored}, above threshold {sel.above_threshold}, selected {sel.selected}\n"
        f"proposals {m.received}: validated {m.validated}, rejected {m.rejected_total} {m.rejected}\n"
        f"added nodes {m.nodes_added}, edges {m.edges_added}, triples {m.triples_added}; "
        f"duplicates {m.duplicates}, backend errors {m.backend_errors}\n"
        f"graph: {out}\nmanifest: {manifest_path}",
        manifest,
    )
    return EXIT_OK


def cmd_eval(args):
    from .report import plot_recovery_by_pattern

    g = load_graph(args.graph)
    truth = load_truth(args.truth)
    metrics = evaluate_recovery(g, truth)
    keys = g.fact_keys()
    by_pattern: dict[str, dict] = {}
    for p in truth.hidden:
        row = by_pattern.setdefault(p.pattern or "unknown", {"hidden": 0, "recovered": 0})
        row["hidden"] += 1
        row["recovered"] += int(p.key in keys)
    metrics["by_pattern"] = by_pattern
    if args.figure and by_pattern:
        metrics["figure"] = str(plot_recovery_by_pattern(by_pattern, args.figure))
    _print(
        args,
        f"hidden relations {metrics['hidden']}, recovered {metrics['recovered_hidden']}\n"
        f"recall    {metrics['recall']:.4f}\n"
        f"precision {metrics['precision']:.4f} ({metrics['added_matching']}/{metrics['added_triples']} added triples match)",
        metrics,
    )
    return EXIT_OK


def cmd_config(args):
    print(dump_config(_config(args)), end="")
    return EXIT_OK


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphmend", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--log", help="append structured JSON-line logs to this file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        if config:
            sp.add_argument("--config", help="YAML pipeline config")
            sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override")
            sp.add_argument("--seed", type=int)

    sp = sub.add_parser("synth", help="generate a synthetic fixture with planted relations")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--entities", type=int, default=500)
    sp.add_argument("--chunks", type=int, default=120)
    sp.add_argument("--planted", type=int, default=100)
    sp.add_argument("--hide-fraction", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest", help="validate a graph, fill missing features, rewrite it")
    sp.add_argument("graph")
    sp.add_argument("--out", help="output path (default: rewrite in place)")
    common(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("stats", help="print graph statistics")
    sp.add_argument("graph")
    sp.add_argument("--base", help="base graph to diff against")
    common(sp, config=False)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("train", help="train the missingness scorer")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--checkpoint", required=True, help="output checkpoint path")
    sp.add_argument("--loss-out", help="loss curve records (default: next to checkpoint)")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--no-figures", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("augment", help="select, complete and merge into a new graph")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--out", required=True)
    sp.add_argument("--planted", help="planted-relations file for the mock backend")
    sp.add_argument("--report-dir", help="where reports and figures go (default: next to --out)")
    sp.add_argument("--budget", type=int)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--max-overlap", type=float)
    sp.add_argument("--strategy", choices=["gnn", "random"])
    sp.add_argument("--no-figures", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("eval", help="score recovery of planted relations")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--figure", help="write a recovery-by-pattern bar chart here")
    common(sp, config=False)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("config", help="print the effective configuration")
    common(sp)
    sp.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.log, args.verbose)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraphFormatError, IntegrityError, CheckpointError) as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EmptyEpochError, TrainingError, BackendError, EmbeddingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
