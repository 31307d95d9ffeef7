"""Matplotlib rendering of run artifacts to image files."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _smooth(values, window):
    v = np.asarray(values, dtype=float)
    if v.size < window or window < 2:
        return v
    kernel = np.ones(window) / window
    return np.convolve(v, kernel, mode="valid")


def render_training_curves(rows: list[dict], out_path, window: int = 100) -> None:
    """Raw, verifier, and mixed reward curves over epochs."""
    epochs = np.array([int(r["epoch"]) for r in rows])
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, label in (("reward_raw", "raw"), ("reward_verifier", "verifier"),
                       ("reward_mixed", "mixed")):
        vals = _smooth([float(r[key]) for r in rows], window)
        ax.plot(epochs[len(epochs) - len(vals):], vals, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("reward (smoothed)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_eval_summary(summary: dict, out_path) -> None:
    """Utilization vs p95 delay scatter plus certified-satisfaction bars."""
    traces = summary["traces"]
    names = sorted(traces)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for name in names:
        entry = traces[name]
        ax1.scatter(entry["p95_delay_ms"], entry["utilization"], label=name)
    ax1.set_xlabel("p95 queuing delay (ms)")
    ax1.set_ylabel("utilization")
    ax1.set_ylim(0, 1.05)
    ax1.grid(alpha=0.3)
    if len(names) <= 8:
        ax1.legend(fontsize=8)

    cert_keys = sorted(next(iter(traces.values()))["cert"].keys())
    width = 0.8 / max(len(cert_keys), 1)
    xs = np.arange(len(names))
    for j, key in enumerate(cert_keys):
        vals = [traces[n]["cert"][key] for n in names]
        ax2.bar(xs + j * width, vals, width=width, label=key)
    ax2.set_xticks(xs + 0.4 - width / 2)
    ax2.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax2.set_ylabel("fraction")
    ax2.set_ylim(0, 1.05)
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_noise_deltas(summary: dict, out_path) -> None:
    """Per-trace percentage change of each metric under observation noise."""
    traces = summary["traces"]
    names = sorted(n for n in traces if "noise_delta_pct" in traces[n])
    if not names:
        return
    metrics = ["utilization", "avg_delay_ms", "p95_delay_ms"]
    xs = np.arange(len(names))
    width = 0.8 / len(metrics)
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, m in enumerate(metrics):
        vals = [traces[n]["noise_delta_pct"][m] for n in names]
        ax.bar(xs + j * width, vals, width=width, label=m)
    ax.axhline(0.0, color="k", linewidth=0.8)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("change under noise (%)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
