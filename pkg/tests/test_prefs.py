"""Preference pairs and the length-normalized margin objective."""

import math
import random

import pytest

from ptkit.errors import InvalidParameter, NonFiniteValue, NotEnoughResponses
from ptkit.prefs import (
    PreferencePair,
    ScoredResponse,
    SimpoParams,
    build_pairs,
    simpo_grad,
    simpo_loss,
)

# -ln sigmoid(0.5), frozen from a 50-digit evaluation.
WORKED_EXAMPLE_LOSS = 0.4740769841801067
LN2 = 0.6931471805599453


def resp(logprobs, reward=0.0, text="r"):
    return ScoredResponse(text, reward, tuple(logprobs))


def test_build_pairs_selects_extremes():
    responses = [resp([-1.0], 0.9), resp([-1.0], 0.2), resp([-1.0], 0.5)]
    pair = build_pairs("p", responses)
    assert pair.chosen is responses[0]
    assert pair.rejected is responses[1]


def test_build_pairs_tie_breaks_by_index():
    responses = [resp([-1.0], 0.5), resp([-2.0], 0.5)]
    pair = build_pairs("p", responses)
    assert pair.chosen is responses[0]
    assert pair.rejected is responses[1]


def test_build_pairs_requires_two_responses():
    with pytest.raises(NotEnoughResponses):
        build_pairs("p", [resp([-1.0], 1.0)])


def test_loss_at_zero_margin_is_ln2():
    # equal mean logprobs across different lengths -> margin 0 -> ln 2
    pair = PreferencePair("p", resp([-0.5, -0.5]), resp([-0.5]))
    assert simpo_loss(pair, SimpoParams(beta=2.0, gamma=0.0)) == pytest.approx(LN2, abs=1e-12)


def test_worked_example():
    # beta=2: chosen sum -1.0 over 2 tokens, rejected sum -4.0 over 4 tokens,
    # gamma=0.5 -> margin 0.5, loss -ln sigmoid(0.5)
    pair = PreferencePair("p", resp([-0.5, -0.5]), resp([-1.0] * 4))
    loss = simpo_loss(pair, SimpoParams(beta=2.0, gamma=0.5))
    assert loss == pytest.approx(WORKED_EXAMPLE_LOSS, abs=1e-12)


def test_loss_vanishes_as_margin_grows():
    rejected_levels = [-1.0, -5.0, -20.0, -50.0]
    params = SimpoParams(beta=2.0, gamma=0.5)
    losses = [
        simpo_loss(PreferencePair("p", resp([-0.01]), resp([level])), params)
        for level in rejected_levels
    ]
    assert losses == sorted(losses, reverse=True)
    assert losses[-1] < 1e-8
    assert losses[-1] > 0.0


def test_loss_invariant_to_token_permutation():
    params = SimpoParams()
    a = PreferencePair("p", resp([-0.1, -0.7, -0.4]), resp([-1.0, -2.0]))
    b = PreferencePair("p", resp([-0.4, -0.1, -0.7]), resp([-2.0, -1.0]))
    assert simpo_loss(a, params) == simpo_loss(b, params)


def test_loss_monotone_in_margin():
    params = SimpoParams(beta=1.5, gamma=0.3)
    previous = math.inf
    for mean_logprob in (-2.0, -1.5, -1.0, -0.5, -0.1):
        pair = PreferencePair("p", resp([mean_logprob] * 3), resp([-2.5] * 2))
        loss = simpo_loss(pair, params)
        assert loss < previous
        previous = loss


def test_gradient_symmetric_case():
    # zero margin -> sigmoid(0) = 0.5, so each chosen gradient is -0.5*beta/len
    params = SimpoParams(beta=2.0, gamma=0.0)
    pair = PreferencePair("p", resp([-1.0, -1.0]), resp([-1.0, -1.0]))
    chosen, rejected = simpo_grad(pair, params)
    assert chosen == [pytest.approx(-0.5 * 2.0 / 2)] * 2
    assert rejected == [pytest.approx(0.5 * 2.0 / 2)] * 2


def test_gradients_equal_within_response():
    pair = PreferencePair("p", resp([-0.2, -1.4, -0.9]), resp([-2.0, -0.5]))
    chosen, rejected = simpo_grad(pair, SimpoParams())
    assert len(set(chosen)) == 1
    assert len(set(rejected)) == 1


def test_gradient_signs():
    rng = random.Random(0)
    for _ in range(50):
        pair = PreferencePair(
            "p",
            resp([rng.uniform(-3, -0.01) for _ in range(rng.randint(1, 6))]),
            resp([rng.uniform(-3, -0.01) for _ in range(rng.randint(1, 6))]),
        )
        chosen, rejected = simpo_grad(pair, SimpoParams())
        assert all(g <= 0 for g in chosen)
        assert all(g >= 0 for g in rejected)


def test_gradient_matches_central_finite_differences():
    rng = random.Random(1)
    params = SimpoParams(beta=2.0, gamma=0.5)
    step = 1e-6
    for _ in range(100):
        chosen_lp = [rng.uniform(-3, -0.01) for _ in range(rng.randint(1, 8))]
        rejected_lp = [rng.uniform(-3, -0.01) for _ in range(rng.randint(1, 8))]
        pair = PreferencePair("p", resp(chosen_lp), resp(rejected_lp))
        grad_chosen, grad_rejected = simpo_grad(pair, params)

        def loss_with(c, r):
            return simpo_loss(PreferencePair("p", resp(c), resp(r)), params)

        for j in range(len(chosen_lp)):
            hi = list(chosen_lp)
            lo = list(chosen_lp)
            hi[j] += step
            lo[j] -= step
            numeric = (loss_with(hi, rejected_lp) - loss_with(lo, rejected_lp)) / (2 * step)
            assert abs(numeric - grad_chosen[j]) <= 1e-4 * max(abs(numeric), 1e-12)
        for j in range(len(rejected_lp)):
            hi = list(rejected_lp)
            lo = list(rejected_lp)
            hi[j] += step
            lo[j] -= step
            numeric = (loss_with(chosen_lp, hi) - loss_with(chosen_lp, lo)) / (2 * step)
            assert abs(numeric - grad_rejected[j]) <= 1e-4 * max(abs(numeric), 1e-12)


def test_response_validation():
    with pytest.raises(InvalidParameter):
        ScoredResponse("r", 0.0, ())
    with pytest.raises(InvalidParameter):
        ScoredResponse("r", 0.0, (0.5,))
    with pytest.raises(NonFiniteValue):
        ScoredResponse("r", 0.0, (float("nan"),))
    with pytest.raises(NonFiniteValue):
        ScoredResponse("r", float("inf"), (-1.0,))
    assert ScoredResponse("r", 0.0, (0.0, -1.0)).length == 2  # zero logprob allowed


def test_params_validation():
    with pytest.raises(InvalidParameter):
        SimpoParams(beta=0.0)
    with pytest.raises(InvalidParameter):
        SimpoParams(gamma=-0.1)
