"""Preference-pair construction and the length-normalized margin objective.

The objective compares the average per-token log-probability of a chosen and
a rejected response, scaled by ``beta``, against a target margin ``gamma``:
``loss = -log sigmoid(beta/|y_w| * sum(logp_w) - beta/|y_l| * sum(logp_l) - gamma)``.
Everything is evaluated in 64-bit with numerically stable log-sigmoid branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidParameter, NonFiniteValue, NotEnoughResponses


@dataclass(frozen=True)
class ScoredResponse:
    text: str
    reward: float
    token_logprobs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "token_logprobs", tuple(float(x) for x in self.token_logprobs))
        if len(self.token_logprobs) < 1:
            raise InvalidParameter("a response needs at least one token log-probability")
        if not all(math.isfinite(x) for x in self.token_logprobs) or not math.isfinite(self.reward):
            raise NonFiniteValue("rewards and token log-probabilities must be finite")
        if any(x > 0 for x in self.token_logprobs):
            raise InvalidParameter("token log-probabilities must be <= 0")

    @property
    def length(self) -> int:
        return len(self.token_logprobs)


@dataclass(frozen=True)
class PreferencePair:
    prompt: str
    chosen: ScoredResponse
    rejected: ScoredResponse


@dataclass(frozen=True)
class SimpoParams:
    beta: float = 2.0
    gamma: float = 0.5

    def __post_init__(self):
        if self.beta <= 0:
            raise InvalidParameter("beta must be positive")
        if self.gamma < 0:
            raise InvalidParameter("gamma must be non-negative")


def build_pairs(prompt: str, responses: Sequence[ScoredResponse]) -> PreferencePair:
    """Top-scoring response becomes chosen, bottom-scoring becomes rejected;
    reward ties resolve to the lower list index."""
    if len(responses) < 2:
        raise NotEnoughResponses(f"need at least two responses, got {len(responses)}")
    chosen_idx = max(range(len(responses)), key=lambda i: (responses[i].reward, -i))
    rest = [i for i in range(len(responses)) if i != chosen_idx]
    rejected_idx = min(rest, key=lambda i: (responses[i].reward, i))
    return PreferencePair(prompt, responses[chosen_idx], responses[rejected_idx])


def _log_sigmoid(x: float) -> float:
    # log sigma(x) = -softplus(-x), split for stability at large |x|.
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _margin(pair: PreferencePair, params: SimpoParams) -> float:
    r_w = params.beta * math.fsum(pair.chosen.token_logprobs) / pair.chosen.length
    r_l = params.beta * math.fsum(pair.rejected.token_logprobs) / pair.rejected.length
    return r_w - r_l - params.gamma


def simpo_loss(pair: PreferencePair, params: SimpoParams = SimpoParams()) -> float:
    loss = -_log_sigmoid(_margin(pair, params))
    if not math.isfinite(loss):
        raise NonFiniteValue("loss evaluation produced a non-finite value")
    return loss


def simpo_grad(
    pair: PreferencePair, params: SimpoParams = SimpoParams()
) -> tuple[list[float], list[float]]:
    """Per-token gradients of the loss. The loss depends on each response only
    through its mean log-probability, so gradients are constant per response:
    ``-sigma(-margin) * beta/|y_w|`` for chosen, ``+sigma(-margin) * beta/|y_l|``
    for rejected."""
    slope = _sigmoid(-_margin(pair, params))
    if not math.isfinite(slope):
        raise NonFiniteValue("gradient evaluation produced a non-finite value")
    chosen = [-slope * params.beta / pair.chosen.length] * pair.chosen.length
    rejected = [slope * params.beta / pair.rejected.length] * pair.rejected.length
    return chosen, rejected
