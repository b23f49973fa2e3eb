"""Campaign reporting: a CSV of the periodic stats plus a few PNG figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STAT_FIELDS = ("t", "execs", "execs_per_sec", "corpus", "states", "transitions", "crashes_unique", "epsilon")


def load_stats(out_dir: str | Path) -> list[dict]:
    path = Path(out_dir) / "stats.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def write_csv(records: list[dict], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=STAT_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(records)
    return path


def _style(ax, xlabel: str, ylabel: str) -> None:
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.grid(alpha=0.3, linewidth=0.5)


def plot_growth(records: list[dict], path: str | Path) -> Path:
    """States, transitions and corpus size against executions."""
    x = [r["execs"] for r in records]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for key, style in (("states", "-o"), ("transitions", "-s"), ("corpus", "--")):
        ax.plot(x, [r[key] for r in records], style, markersize=3, label=key)
    _style(ax, "executions", "count")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_throughput(records: list[dict], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot([r["t"] for r in records], [r["execs_per_sec"] for r in records], "-", color="tab:green")
    _style(ax, "seconds", "executions / s")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_state_activity(ipsm: dict, path: str | Path) -> Path:
    """Per-state fuzz counts and saved paths (bar chart, log scale)."""
    states = sorted(ipsm["states"], key=lambda s: s["state_id"])
    labels = [str(s["state_id"]) for s in states]
    xs = range(len(states))
    fig, ax = plt.subplots(figsize=(max(4, 0.35 * len(states) + 2), 3.5))
    ax.bar([i - 0.2 for i in xs], [s["fuzzs"] + 1 for s in states], width=0.4, label="fuzzs + 1")
    ax.bar([i + 0.2 for i in xs], [s["paths"] + 1 for s in states], width=0.4, label="paths + 1")
    ax.set_yscale("log")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    _style(ax, "state id", "count")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def build_report(out_dir: str | Path, dest: str | Path | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    dest = Path(dest) if dest else out_dir / "report"
    dest.mkdir(parents=True, exist_ok=True)
    records = load_stats(out_dir)
    files = [write_csv(records, dest / "stats.csv"),
             plot_growth(records, dest / "growth.png"),
             plot_throughput(records, dest / "throughput.png")]
    ipsm_path = out_dir / "ipsm.json"
    if ipsm_path.exists():
        files.append(plot_state_activity(json.loads(ipsm_path.read_text()), dest / "states.png"))
    return files
