"""Independent reference implementations used to compute expected values.

Everything here is written straight from the method definitions with scalar
loops, deliberately avoiding the package's vectorized code paths.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

F32 = np.float32


def ties_merge_oracle(base, models, weights, density, lam):
    """TIES from the definition: per-model trim by magnitude, elect the sign
    of the weighted sum, average agreeing entries, apply to the base.

    ``base``/``models`` are dicts of 1-D float32 arrays. All arithmetic uses
    float32 scalars so results are bit-comparable with the engine.
    """
    out = {}
    for name in base:
        b = base[name]
        n = b.size
        kept = []
        for model in models:
            tau = [F32(model[name][e]) - F32(b[e]) for e in range(n)]
            keep_count = math.ceil(density * n)
            order = sorted(range(n), key=lambda e: (-abs(tau[e]), e))
            keep = set(order[:keep_count])
            kept.append([tau[e] if e in keep else F32(0.0) for e in range(n)])
        merged = []
        for e in range(n):
            total = F32(0.0)
            for w, tau in zip(weights, kept):
                total = total + F32(w) * tau[e]
            if total > 0:
                s = 1
            elif total < 0:
                s = -1
            else:
                s = 0
            num = F32(0.0)
            den = F32(0.0)
            if s != 0:
                for w, tau in zip(weights, kept):
                    value = tau[e]
                    value_sign = 1 if value > 0 else -1 if value < 0 else 0
                    if value_sign == s:
                        num = num + F32(w) * value
                        den = den + F32(w)
            fused = num / den if den > 0 else F32(0.0)
            merged.append(F32(b[e]) + F32(lam) * fused)
        out[name] = np.array(merged, dtype=np.float32)
    return out


def dare_ties_expectation_oracle(base, model_rows, weights, density):
    """Exact expectation of DARE + sign election + disjoint merge, by
    enumerating every per-element drop pattern with exact rational weights."""
    n = len(base)
    k = len(model_rows)
    p = Fraction(1) - Fraction(density)
    expect = []
    for e in range(n):
        taus = [Fraction(float(row[e])) - Fraction(float(base[e])) for row in model_rows]
        total = Fraction(0)
        for pattern in range(2**k):
            prob = Fraction(1)
            survivors = []
            for i in range(k):
                if pattern >> i & 1:
                    prob *= 1 - p
                    survivors.append(taus[i] / (1 - p))
                else:
                    prob *= p
                    survivors.append(None)
            weighted_sum = sum(
                Fraction(weights[i]) * survivors[i]
                for i in range(k)
                if survivors[i] is not None
            )
            sign = 1 if weighted_sum > 0 else -1 if weighted_sum < 0 else 0
            num = Fraction(0)
            den = Fraction(0)
            for i in range(k):
                value = survivors[i]
                if value is None or sign == 0:
                    continue
                value_sign = 1 if value > 0 else -1 if value < 0 else 0
                if value_sign == sign:
                    num += Fraction(weights[i]) * value
                    den += Fraction(weights[i])
            fused = num / den if den else Fraction(0)
            total += prob * fused
        expect.append(float(base[e]) + float(total))
    return np.array(expect, dtype=np.float64)


def bpe_dropout_distribution(word, merges, p):
    """Exact outcome distribution of dropout tokenization by recursing over
    every subset of per-pass drop decisions."""
    ranks = {pair: rank for rank, pair in enumerate(merges)}
    results: dict[tuple, float] = {}

    def positions(symbols):
        return [
            (ranks[(symbols[i], symbols[i + 1])], i)
            for i in range(len(symbols) - 1)
            if (symbols[i], symbols[i + 1]) in ranks
        ]

    def apply(symbols, rank, spots):
        merged_left, merged_right = merges[rank]
        out = []
        cursor = 0
        for pos in spots:
            if pos < cursor:
                continue
            out.extend(symbols[cursor:pos])
            out.append(merged_left + merged_right)
            cursor = pos + 2
        out.extend(symbols[cursor:])
        return out

    def walk(symbols, prob):
        cands = positions(symbols)
        if not cands:
            results[tuple(symbols)] = results.get(tuple(symbols), 0.0) + prob
            return
        m = len(cands)
        for pattern in range(2**m):
            branch = prob
            survivors = []
            for bit in range(m):
                if pattern >> bit & 1:
                    branch *= 1 - p
                    survivors.append(cands[bit])
                else:
                    branch *= p
            if branch == 0.0:
                continue
            if not survivors:
                results[tuple(symbols)] = results.get(tuple(symbols), 0.0) + branch
                continue
            best = min(rank for rank, _ in survivors)
            spots = [i for rank, i in survivors if rank == best]
            walk(apply(symbols, best, spots), branch)

    walk(list(word), 1.0)
    return results
