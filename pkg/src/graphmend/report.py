"""Figures and line-delimited records written next to CLI outputs."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (5.0, 3.2)


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _finish(fig, ax, path):
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_curve(losses, path):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(range(1, len(losses) + 1), losses, marker="o", ms=3, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean BCE")
    ax.set_title("scorer training loss")
    return _finish(fig, ax, path)


def plot_score_histogram(scores, threshold, path, selected_scores=()):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    bins = [i / 20 for i in range(21)]
    ax.hist(scores, bins=bins, color="0.7", label="candidates")
    if len(selected_scores):
        ax.hist(selected_scores, bins=bins, color="tab:blue", label="selected")
    ax.axvline(threshold, color="tab:red", ls="--", lw=1, label=f"threshold {threshold:.2f}")
    ax.set_xlabel("missingness score")
    ax.set_ylabel("views")
    ax.legend(fontsize=8)
    return _finish(fig, ax, path)


def plot_recovery_by_pattern(metrics_by_pattern: dict, path):
    names = sorted(metrics_by_pattern)
    hidden = [metrics_by_pattern[n]["hidden"] for n in names]
    found = [metrics_by_pattern[n]["recovered"] for n in names]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    xs = range(len(names))
    ax.bar([x - 0.2 for x in xs], hidden, width=0.4, color="0.7", label="hidden")
    ax.bar([x + 0.2 for x in xs], found, width=0.4, color="tab:green", label="recovered")
    ax.set_xticks(list(xs), names)
    ax.set_ylabel("relations")
    ax.legend(fontsize=8)
    return _finish(fig, ax, path)


def plot_budget_curve(budgets, recalls: dict, path):
    """``recalls`` maps a strategy name to one recall per budget."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for name, ys in sorted(recalls.items()):
        ax.plot(budgets, ys, marker="o", label=name)
    ax.set_xlabel("budget (backend calls)")
    ax.set_ylabel("hidden-relation recall")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    return _finish(fig, ax, path)
