"""Figures written next to the CSV reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def figure_path(csv_path, suffix: str = "") -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + suffix + ".png")


def plot_sweep(reports, csv_path, x: str = "trc_ns", title: str | None = None) -> Path:
    """MER against the swept variable, one line per (scheme, marc)."""
    series: dict[tuple, list] = {}
    for r in reports:
        series.setdefault((r.side, r.scheme, r.marc), []).append((getattr(r, x), r.mer))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (side, scheme, marc), pts in sorted(series.items()):
        pts = sorted(p for p in pts if p[1] is not None)
        if not pts:
            continue
        xs, ys = zip(*pts)
        label = f"{side}/{scheme}" + (" + MARC" if marc else "")
        ax.plot(xs, ys, marker="o" if marc else "s", linestyle="-" if marc else "--", label=label)
    ax.set_yscale("log")
    ax.set_xlabel("tRC (ns)" if x == "trc_ns" else "aggressors")
    ax.set_ylabel("MER")
    ax.axhline(1.0, color="grey", linewidth=0.8)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    out = figure_path(csv_path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_bench(rows, csv_path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    xs = [str(r.n_distinct) for r in rows]
    ax.bar(xs, [r.mean_rate for r in rows], color="tab:blue")
    ax.errorbar(xs, [r.mean_rate for r in rows],
                yerr=[[r.mean_rate - r.min_rate for r in rows], [r.max_rate - r.mean_rate for r in rows]],
                fmt="none", ecolor="black", capsize=2, linewidth=0.8)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("tRC values per period")
    ax.set_ylabel("recognition rate")
    fig.tight_layout()
    out = figure_path(csv_path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_timeline(records, csv_path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 2.5))
    ax.step([r.window_index for r in records], [int(r.verdict) for r in records], where="post")
    ax.set_yticks([0, 1, 2, 3], ["Inactive", "A", "B", "C"])
    ax.set_xlabel("tREFi window")
    ax.set_ylabel("verdict")
    fig.tight_layout()
    out = figure_path(csv_path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
