"""Continued-pretraining plans: token-mix allocation and the warmup-stable-decay
learning-rate schedule, plus the training-config document handed to a trainer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from math import cos, pi
from typing import Mapping, Sequence

from .errors import BudgetInfeasible, InvalidParameter, OutOfRange, RatioSumInvalid

CATEGORIES = ("SEA", "EN", "CODE")


@dataclass(frozen=True)
class SourceSpec:
    name: str
    category: str
    available_tokens: int

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise InvalidParameter(
                f"category for {self.name!r} must be one of {CATEGORIES}, got {self.category!r}"
            )
        if self.available_tokens < 0:
            raise InvalidParameter(f"available_tokens for {self.name!r} must be non-negative")


@dataclass(frozen=True)
class Allocation:
    name: str
    category: str
    tokens: int


@dataclass
class MixPlan:
    allocations: list[Allocation]
    category_totals: dict[str, int]
    total_budget: int

    def tokens_for(self, name: str) -> int:
        for alloc in self.allocations:
            if alloc.name == name:
                return alloc.tokens
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "total_budget": self.total_budget,
            "category_totals": dict(self.category_totals),
            "allocations": [
                {"name": a.name, "category": a.category, "tokens": a.tokens}
                for a in self.allocations
            ],
        }


def _category_targets(ratios: Mapping[str, float], budget: int) -> dict[str, int]:
    # Largest-remainder rounding over exact rational targets so the category
    # totals sum to the budget as an identity.
    total = sum(ratios.values())
    if abs(total - 1.0) > 1e-9:
        raise RatioSumInvalid(f"category ratios sum to {total!r}, expected 1")
    exact = {cat: Fraction(ratio) * budget for cat, ratio in ratios.items()}
    floors = {cat: int(value) for cat, value in exact.items()}
    leftover = budget - sum(floors.values())
    order = sorted(exact, key=lambda cat: (-(exact[cat] - floors[cat]), cat))
    targets = dict(floors)
    for cat in order[:leftover]:
        targets[cat] += 1
    return targets


def plan_mix(
    sources: Sequence[SourceSpec], ratios: Mapping[str, float], budget: int
) -> MixPlan:
    """Allocate a token budget across sources to hit per-category ratios.

    Within a category, tokens are distributed proportionally to availability
    (exact integer arithmetic); rounding residue goes to the largest source,
    spilling to the next-largest if it would exceed that source's supply.
    """
    if budget <= 0:
        raise InvalidParameter(f"budget must be positive, got {budget}")
    names = [s.name for s in sources]
    if len(set(names)) != len(names):
        raise InvalidParameter("source names must be unique")
    for cat in ratios:
        if cat not in CATEGORIES:
            raise InvalidParameter(f"unknown category {cat!r} in ratios")
    targets = _category_targets(ratios, budget)

    by_category: dict[str, list[SourceSpec]] = {cat: [] for cat in targets}
    for source in sources:
        if source.category in by_category:
            by_category[source.category].append(source)

    allocations: dict[str, int] = {s.name: 0 for s in sources}
    category_totals: dict[str, int] = {}
    for cat, target in targets.items():
        members = by_category[cat]
        available = sum(s.available_tokens for s in members)
        if available < target:
            raise BudgetInfeasible(
                f"category {cat}: target {target} tokens exceeds available {available}"
            )
        floors = {
            s.name: (target * s.available_tokens) // available if available else 0
            for s in members
        }
        residue = target - sum(floors.values())
        # Largest source absorbs the residue; spill down if it saturates.
        for s in sorted(members, key=lambda s: -s.available_tokens):
            if residue == 0:
                break
            room = s.available_tokens - floors[s.name]
            take = min(room, residue)
            floors[s.name] += take
            residue -= take
        for s in members:
            allocations[s.name] = floors[s.name]
        category_totals[cat] = target

    plan = MixPlan(
        allocations=[Allocation(s.name, s.category, allocations[s.name]) for s in sources],
        category_totals=category_totals,
        total_budget=budget,
    )
    assert sum(a.tokens for a in plan.allocations) == budget
    return plan


def builtin_cpt_sources() -> list[SourceSpec]:
    """The bundled continued-pretraining source table."""
    raw = json.loads(
        resources.files("ptkit.data").joinpath("cpt_sources.json").read_text("utf-8")
    )
    return [
        SourceSpec(s["name"], s["category"], int(s["available_tokens"]))
        for s in raw["sources"]
    ]


def load_sources(path) -> list[SourceSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    entries = raw["sources"] if isinstance(raw, dict) else raw
    return [
        SourceSpec(s["name"], s["category"], int(s["available_tokens"]))
        for s in entries
    ]


DECAY_SHAPES = ("linear", "cosine")


@dataclass(frozen=True)
class WsdSchedule:
    """Warmup-stable-decay learning-rate curve over a step or token horizon."""

    total: float
    warmup_fraction: float = 0.10
    decay_fraction: float = 0.10
    eta_max: float = 1e-5
    eta_min: float = 1e-7
    decay_shape: str = "linear"

    def __post_init__(self):
        if self.total <= 0:
            raise InvalidParameter("schedule length must be positive")
        if self.warmup_fraction < 0 or self.decay_fraction < 0:
            raise InvalidParameter("phase fractions must be non-negative")
        if self.warmup_fraction + self.decay_fraction > 1:
            raise InvalidParameter("warmup and decay fractions exceed the whole schedule")
        if not (0 <= self.eta_min <= self.eta_max):
            raise InvalidParameter("learning-rate bounds require 0 <= eta_min <= eta_max")
        if self.decay_shape not in DECAY_SHAPES:
            raise InvalidParameter(f"decay_shape must be one of {DECAY_SHAPES}")


def lr_at(schedule: WsdSchedule, t: float) -> float:
    """Learning rate at position ``t``: linear ramp from 0, plateau at
    ``eta_max``, then decay to exactly ``eta_min`` at the end."""
    total = float(schedule.total)
    if not (0 <= t <= total):
        raise OutOfRange(f"position {t} outside [0, {total}]")
    warmup_end = schedule.warmup_fraction * total
    decay_span = schedule.decay_fraction * total
    decay_start = total - decay_span
    if t == total:
        return schedule.eta_min
    if t < warmup_end:
        return schedule.eta_max * (t / warmup_end)
    if t < decay_start or decay_span == 0:
        return schedule.eta_max
    frac = (t - decay_start) / decay_span
    if schedule.decay_shape == "linear":
        return schedule.eta_max + (schedule.eta_min - schedule.eta_max) * frac
    return schedule.eta_min + (schedule.eta_max - schedule.eta_min) * (1 + cos(pi * frac)) / 2


def schedule_table(schedule: WsdSchedule, steps: int = 100) -> list[dict]:
    """Sampled (position, lr) rows at ``1/steps`` increments, endpoints included."""
    if steps < 1:
        raise InvalidParameter("table resolution must be at least 1 step")
    rows = []
    for i in range(steps + 1):
        t = schedule.total * i / steps
        rows.append({"position": t, "lr": lr_at(schedule, t)})
    return rows


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adamw"
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-15
    weight_decay: float = 0.1

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidParameter("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise InvalidParameter("eps must be positive")


def emit_train_config(
    plan: MixPlan, schedule: WsdSchedule, opt: OptimizerConfig = OptimizerConfig()
) -> str:
    """Deterministic JSON document for an external trainer: the token mix,
    a sampled schedule table at 1% increments, and the optimizer settings."""
    doc = {
        "mix_plan": plan.to_dict(),
        "schedule": {
            "total": schedule.total,
            "warmup_fraction": schedule.warmup_fraction,
            "decay_fraction": schedule.decay_fraction,
            "eta_max": schedule.eta_max,
            "eta_min": schedule.eta_min,
            "decay_shape": schedule.decay_shape,
            "table": schedule_table(schedule, 100),
        },
        "optimizer": {
            "name": opt.name,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
            "weight_decay": opt.weight_decay,
        },
    }
    return json.dumps(doc, sort_keys=True, indent=2)
