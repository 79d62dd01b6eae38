"""Render figures from metrics/accounting output next to the delimited files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _read_metrics(path):
    rows = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        for line in f:
            parts = line.rstrip("\n").split("\t")
            rows.append(dict(zip(header, parts)))
    return rows


def plot_training_curves(metrics_path, out_path) -> Path:
    """NLL vs step, one line per (split, pair) series in the metrics file."""
    rows = _read_metrics(metrics_path)
    series: dict[tuple[str, str], tuple[list, list]] = {}
    for r in rows:
        if not r.get("nll"):
            continue
        key = (r["split"], r["pair"])
        steps, nlls = series.setdefault(key, ([], []))
        steps.append(int(r["step"]))
        nlls.append(float(r["nll"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (split, pair), (steps, nlls) in sorted(series.items()):
        label = split if pair == "-" else f"{split}/{pair}"
        ax.plot(steps, nlls, marker="o", markersize=3, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("NLL")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def plot_bleu_bars(scores: dict[str, float], out_path, title: str = "BLEU") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    names = list(scores)
    ax.bar(names, [scores[n] for n in names], color="#4878d0")
    ax.set_ylabel("BLEU")
    ax.set_title(title)
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def plot_memory_bars(reports: dict[str, object], out_path) -> Path:
    """Stacked params/grads/optimizer-state bytes per recipe."""
    names = list(reports)
    params = [reports[n].bytes_params_total / 2**20 for n in names]
    grads = [reports[n].bytes_grads / 2**20 for n in names]
    state = [reports[n].bytes_optimizer_state / 2**20 for n in names]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(names, params, label="params", color="#4878d0")
    ax.bar(names, grads, bottom=params, label="grads", color="#ee854a")
    bottoms = [p + g for p, g in zip(params, grads)]
    ax.bar(names, state, bottom=bottoms, label="optimizer state", color="#6acc64")
    ax.set_ylabel("MiB")
    ax.legend(fontsize=8)
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)
