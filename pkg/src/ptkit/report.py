"""Figure rendering for the CLI report paths.

Figures are written to files next to the delimited output; rendering is
headless (Agg backend) so it works in batch environments.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .corpus.filtering import FilterStats
from .planning import MixPlan, WsdSchedule, lr_at

_CATEGORY_COLORS = {"SEA": "#1f77b4", "EN": "#ff7f0e", "CODE": "#2ca02c"}


def save_schedule_figure(schedule: WsdSchedule, path: str | Path, points: int = 512) -> Path:
    ts = np.linspace(0.0, float(schedule.total), points)
    lrs = [lr_at(schedule, float(t)) for t in ts]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(ts, lrs, lw=2)
    warmup_end = schedule.warmup_fraction * schedule.total
    decay_start = schedule.total - schedule.decay_fraction * schedule.total
    ax.axvspan(0, warmup_end, alpha=0.12, color="tab:green", label="warmup")
    ax.axvspan(decay_start, schedule.total, alpha=0.12, color="tab:red", label="decay")
    ax.set_xlabel("position (tokens or steps)")
    ax.set_ylabel("learning rate")
    ax.set_yscale("log")
    ax.set_title("warmup-stable-decay schedule")
    ax.legend(loc="lower center")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_mix_figure(plan: MixPlan, path: str | Path) -> Path:
    names = [a.name for a in plan.allocations]
    tokens = np.array([a.tokens for a in plan.allocations], dtype=float) / 1e9
    colors = [_CATEGORY_COLORS.get(a.category, "#7f7f7f") for a in plan.allocations]
    fig, ax = plt.subplots(figsize=(8, 0.5 * max(len(names), 4) + 1.5))
    ypos = np.arange(len(names))
    ax.barh(ypos, tokens, color=colors)
    ax.set_yticks(ypos, names)
    ax.invert_yaxis()
    ax.set_xlabel("allocated tokens (billions)")
    totals = ", ".join(f"{cat}={tok / 1e9:g}B" for cat, tok in plan.category_totals.items())
    ax.set_title(f"token mix over {plan.total_budget / 1e9:g}B ({totals})")
    handles = [
        plt.Rectangle((0, 0), 1, 1, color=color)
        for cat, color in _CATEGORY_COLORS.items()
        if cat in plan.category_totals
    ]
    labels = [cat for cat in _CATEGORY_COLORS if cat in plan.category_totals]
    if handles:
        ax.legend(handles, labels, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_filter_figure(stats: FilterStats, path: str | Path) -> Path:
    labels = ["retained"] + [f"dropped: {reason}" for reason in stats.dropped]
    values = [stats.retained] + list(stats.dropped.values())
    colors = ["tab:green"] + ["tab:red"] * len(stats.dropped)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(values)), values, color=colors)
    ax.set_xticks(range(len(values)), labels, rotation=20, ha="right")
    ax.set_ylabel("documents")
    ax.set_title(f"filter outcome over {stats.total} documents")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_loss_figure(losses: Sequence[float], path: str | Path, bins: int = 40) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(list(losses), bins=bins, color="tab:blue", alpha=0.8)
    ax.set_xlabel("pairwise loss")
    ax.set_ylabel("pairs")
    ax.set_title("preference-objective loss distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
