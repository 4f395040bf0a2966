"""Checkpoint merge algorithms operating on task vectors.

Implemented methods: weighted linear interpolation, task arithmetic, TIES
(trim / elect sign / disjoint merge), DARE drop-and-rescale, DELLA-Linear
(magnitude-ranked random pruning fused without sign election), and Consensus
task arithmetic (TALL-mask agreement filtering).

All arithmetic runs in 32-bit accumulation regardless of storage dtype; the
result is cast back to the base checkpoint's dtype only at the end. Drop
randomness is a pure function of ``(seed, tensor name, flat element index)``,
so results are independent of worker count and model order.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import (
    IncompatibleCheckpoints,
    InvalidConsensusK,
    InvalidDensity,
    InvalidParameter,
    NonFiniteValue,
    ProbabilityOutOfRange,
    ZeroWeightSum,
)
from .tensorstore import Tensor, TensorMap, validate_compat


class SparsifyMode(Enum):
    TRIM = "trim"
    DARE = "dare"
    MAGPRUNE = "magprune"


@dataclass(frozen=True)
class MergeParams:
    """Knobs shared by the merge methods.

    ``weights`` defaults to 1 per input. ``density`` is the kept fraction for
    trim/drop sparsification; ``densities`` optionally overrides it per input.
    ``lam`` scales the fused delta before it is applied to the base.
    ``epsilon_rank`` spreads DELLA drop probabilities across magnitude ranks.
    ``tall_threshold`` and ``consensus_k`` drive the consensus mask.
    """

    weights: tuple[float, ...] | None = None
    density: float = 1.0
    lam: float = 1.0
    epsilon_rank: float = 0.0
    tall_threshold: float = 1.0
    consensus_k: int = 2
    seed: int = 0
    normalize: bool = True
    densities: tuple[float, ...] | None = None


@dataclass(frozen=True)
class TaskVector:
    """Per-tensor delta of a fine-tuned checkpoint against its base."""

    deltas: TensorMap
    base_id: str = ""


_U64 = np.uint64


def _element_uniforms(seed: int, name: str, count: int) -> np.ndarray:
    """Deterministic per-element uniforms in [0, 1), keyed by (seed, name, index).

    A 64-bit key is derived from the seed and tensor name; consecutive element
    indices are then mixed with the splitmix64 finalizer.
    """
    key_bytes = hashlib.blake2b(
        f"{seed}\x1f{name}".encode("utf-8"), digest_size=8
    ).digest()
    key = _U64(int.from_bytes(key_bytes, "little"))
    z = np.arange(count, dtype=np.uint64) + key
    z = (z + _U64(0x9E3779B97F4A7C15)) & _U64(0xFFFFFFFFFFFFFFFF)
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    z = z ^ (z >> _U64(31))
    return (z >> _U64(11)).astype(np.float64) * (2.0**-53)


def _check_density(density: float) -> None:
    if not (0.0 < density <= 1.0):
        raise InvalidDensity(f"density must be in (0, 1], got {density}")


def _resolve_weights(params: MergeParams, n: int) -> list[float]:
    if params.weights is None:
        return [1.0] * n
    weights = [float(w) for w in params.weights]
    if len(weights) != n:
        raise InvalidParameter(f"got {len(weights)} weights for {n} inputs")
    if any(w < 0 for w in weights):
        raise InvalidParameter("weights must be non-negative")
    return weights


def _resolve_densities(params: MergeParams, n: int) -> list[float]:
    if params.densities is None:
        densities = [float(params.density)] * n
    else:
        densities = [float(d) for d in params.densities]
        if len(densities) != n:
            raise InvalidParameter(f"got {len(densities)} densities for {n} inputs")
    for d in densities:
        _check_density(d)
    return densities


def _require_compat(maps: list[TensorMap], context: str) -> None:
    report = validate_compat(maps)
    if not report.ok:
        raise IncompatibleCheckpoints(f"{context}: {report.summary()}")


def _map_tensors(
    names: Sequence[str], fn: Callable[[str], Tensor], jobs: int = 1
) -> dict[str, Tensor]:
    # Tensors are independent; thread results are reassembled in name order,
    # so the output is identical for any worker count.
    if jobs <= 1 or len(names) <= 1:
        return {name: fn(name) for name in names}
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(fn, names))
    return dict(zip(names, results))


def task_vector(model: TensorMap, base: TensorMap, base_id: str = "") -> TaskVector:
    """Elementwise ``model - base`` in 32-bit precision."""
    _require_compat([model, base], "task_vector")
    deltas = {}
    for name in model.names():
        with np.errstate(over="ignore"):  # overflow reported as NonFiniteValue below
            values = model[name].to_f32() - base[name].to_f32()
        if values.size and not np.isfinite(values).all():
            raise NonFiniteValue(f"delta for {name!r} overflows 32-bit range")
        deltas[name] = Tensor("F32", values)
    return TaskVector(TensorMap(deltas), base_id=base_id)


def _delta_compat(base: TensorMap, deltas: TensorMap, context: str) -> None:
    if set(base.names()) != set(deltas.names()):
        raise IncompatibleCheckpoints(f"{context}: tensor name sets differ")
    for name in base.names():
        if base[name].shape != deltas[name].shape:
            raise IncompatibleCheckpoints(f"{context}: shape mismatch on {name!r}")


def apply_delta(
    base: TensorMap, delta: TaskVector, lam: float = 1.0, jobs: int = 1
) -> TensorMap:
    """``base + lam * delta``, accumulated in 32-bit, cast back to base dtype."""
    _delta_compat(base, delta.deltas, "apply_delta")
    scale = np.float32(lam)

    def one(name: str) -> Tensor:
        out = base[name].to_f32() + scale * delta.deltas[name].to_f32()
        return Tensor.from_values(out, base[name].dtype)

    return TensorMap(_map_tensors(base.names(), one, jobs))


def _sparsify_values(
    values: np.ndarray, name: str, mode: SparsifyMode, density: float,
    epsilon_rank: float, seed: int,
) -> np.ndarray:
    _check_density(density)
    flat = values.reshape(-1)
    n = flat.size
    if n == 0:
        return values

    if mode is SparsifyMode.TRIM:
        if density == 1.0:
            return values
        keep = math.ceil(density * n)
        # Stable sort on descending magnitude keeps lower flat indices on ties.
        order = np.argsort(-np.abs(flat), kind="stable")
        out = np.zeros(n, dtype=np.float32)
        kept = order[:keep]
        out[kept] = flat[kept]
        return out.reshape(values.shape)

    if mode is SparsifyMode.DARE:
        p = 1.0 - density
        if p == 0.0:
            return values
        uniforms = _element_uniforms(seed, name, n)
        out = np.where(uniforms >= p, flat / np.float32(density), np.float32(0.0))
        return out.reshape(values.shape)

    # MAGPRUNE: drop probability rises linearly as magnitude rank falls.
    # The extreme probabilities sit at ranks 0 and n-1, so the range check is
    # analytic; roughly 1e-16 of float residue at the p = 0 boundary is kept.
    if n == 1:
        p_low = p_high = 1.0 - density
    else:
        p_high = (1.0 - density) + epsilon_rank * 0.5
        p_low = (1.0 - density) - epsilon_rank * 0.5
    if p_low < -1e-9 or p_high >= 1.0:
        raise ProbabilityOutOfRange(
            f"drop probabilities [{p_low:.6g}, {p_high:.6g}] leave [0, 1) "
            f"for density={density}, epsilon_rank={epsilon_rank}"
        )
    if p_high <= 0.0:
        return values
    if n == 1:
        probs = np.array([1.0 - density])
    else:
        order = np.argsort(np.abs(flat), kind="stable")
        ranks = np.empty(n, dtype=np.float64)
        ranks[order] = np.arange(n, dtype=np.float64)
        probs = (1.0 - density) + epsilon_rank * (0.5 - ranks / (n - 1))
        np.maximum(probs, 0.0, out=probs)
    uniforms = _element_uniforms(seed, name, n)
    out = np.where(uniforms >= probs, (flat / (1.0 - probs)).astype(np.float32), np.float32(0.0))
    return out.reshape(values.shape)


def sparsify(tv: TaskVector, mode: SparsifyMode, params: MergeParams) -> TaskVector:
    """Zero out task-vector entries by trimming or random dropping.

    TRIM keeps the ``ceil(density * n)`` largest-magnitude entries per tensor.
    DARE drops each entry independently with probability ``1 - density`` and
    rescales survivors by ``1 / density``. MAGPRUNE ranks entries ascending by
    magnitude and drops entry at rank k with probability
    ``(1 - density) + epsilon_rank * (1/2 - k/(n-1))``, rescaling survivors by
    the inverse keep probability; both random modes are unbiased elementwise.
    """
    out = {
        name: Tensor(
            "F32",
            _sparsify_values(
                tensor.to_f32(), name, mode, params.density,
                params.epsilon_rank, params.seed,
            ),
        )
        for name, tensor in tv.deltas.items()
    }
    return TaskVector(TensorMap(out), base_id=tv.base_id)


def _elect_disjoint_values(
    arrays: list[np.ndarray], weights: list[float]
) -> np.ndarray:
    total = np.zeros(arrays[0].shape, dtype=np.float32)
    for w, arr in zip(weights, arrays):
        total = total + np.float32(w) * arr
    sign = np.sign(total)
    numer = np.zeros_like(total)
    denom = np.zeros_like(total)
    for w, arr in zip(weights, arrays):
        agrees = np.sign(arr) == sign
        w32 = np.float32(w)
        numer = numer + np.where(agrees, w32 * arr, np.float32(0.0))
        denom = denom + np.where(agrees, w32, np.float32(0.0))
    safe = np.where(denom > 0, denom, np.float32(1.0))
    return np.where((sign != 0) & (denom > 0), numer / safe, np.float32(0.0))


def elect_and_disjoint(tvs: list[TaskVector], weights: list[float]) -> TaskVector:
    """Per element: elect the sign of the weighted sum, then average the
    agreeing contributions. Zero entries never contribute; a zero weighted sum
    elects sign 0 and yields 0."""
    if not tvs:
        raise InvalidParameter("elect_and_disjoint requires at least one task vector")
    if len(weights) != len(tvs):
        raise InvalidParameter(f"got {len(weights)} weights for {len(tvs)} task vectors")
    if len(tvs) > 1:
        _require_compat([tv.deltas for tv in tvs], "elect_and_disjoint")
    out = {}
    for name in tvs[0].deltas.names():
        arrays = [tv.deltas[name].to_f32() for tv in tvs]
        out[name] = Tensor("F32", _elect_disjoint_values(arrays, weights))
    return TaskVector(TensorMap(out), base_id=tvs[0].base_id)


def merge_linear(models: list[TensorMap], params: MergeParams, jobs: int = 1) -> TensorMap:
    """Weighted elementwise average (or plain weighted sum when not normalizing)."""
    if not models:
        raise InvalidParameter("merge_linear requires at least one model")
    if len(models) > 1:
        _require_compat(models, "merge_linear")
    weights = _resolve_weights(params, len(models))
    total_w = sum(weights)
    if params.normalize and total_w == 0.0:
        raise ZeroWeightSum("weights sum to zero with normalize enabled")

    def one(name: str) -> Tensor:
        acc = np.zeros(models[0][name].shape, dtype=np.float32)
        for w, model in zip(weights, models):
            acc = acc + np.float32(w) * model[name].to_f32()
        if params.normalize:
            acc = acc / np.float32(total_w)
        return Tensor.from_values(acc, models[0][name].dtype)

    return TensorMap(_map_tensors(models[0].names(), one, jobs))


def _task_vectors(base: TensorMap, models: list[TensorMap], context: str) -> list[TaskVector]:
    _require_compat([base, *models], context)
    return [task_vector(m, base) for m in models]


def _fuse_weighted(
    tvs: list[TaskVector], weights: list[float], normalize: bool
) -> TaskVector:
    total_w = sum(weights)
    if normalize and total_w == 0.0:
        raise ZeroWeightSum("weights sum to zero with normalize enabled")
    out = {}
    for name in tvs[0].deltas.names():
        acc = np.zeros(tvs[0].deltas[name].shape, dtype=np.float32)
        for w, tv in zip(weights, tvs):
            acc = acc + np.float32(w) * tv.deltas[name].to_f32()
        if normalize:
            acc = acc / np.float32(total_w)
        out[name] = Tensor("F32", acc)
    return TaskVector(TensorMap(out))


def merge_task_arithmetic(
    base: TensorMap, models: list[TensorMap], params: MergeParams, jobs: int = 1
) -> TensorMap:
    """``base + lam * weighted-sum-of-deltas`` (mean when normalizing)."""
    if not models:
        raise InvalidParameter("task arithmetic requires at least one model")
    tvs = _task_vectors(base, models, "merge_task_arithmetic")
    weights = _resolve_weights(params, len(models))
    fused = _fuse_weighted(tvs, weights, params.normalize)
    return apply_delta(base, fused, params.lam, jobs=jobs)


def _merge_ties_like(
    base: TensorMap,
    models: list[TensorMap],
    params: MergeParams,
    mode: SparsifyMode,
    jobs: int,
) -> TensorMap:
    if len(models) < 2:
        raise InvalidParameter("sign-election merges require at least two models")
    _require_compat([base, *models], "merge_ties")
    weights = _resolve_weights(params, len(models))
    densities = _resolve_densities(params, len(models))
    base_f32 = {name: base[name].to_f32() for name in base.names()}
    model_f32 = [{name: m[name].to_f32() for name in base.names()} for m in models]
    scale = np.float32(params.lam)

    def one(name: str) -> Tensor:
        hats = [
            _sparsify_values(
                model_f32[i][name] - base_f32[name], name, mode,
                densities[i], params.epsilon_rank, params.seed,
            )
            for i in range(len(models))
        ]
        fused = _elect_disjoint_values(hats, weights)
        return Tensor.from_values(base_f32[name] + scale * fused, base[name].dtype)

    return TensorMap(_map_tensors(base.names(), one, jobs))


def merge_ties(
    base: TensorMap, models: list[TensorMap], params: MergeParams, jobs: int = 1
) -> TensorMap:
    """Trim low-magnitude delta entries, elect signs, disjoint-average, apply."""
    return _merge_ties_like(base, models, params, SparsifyMode.TRIM, jobs)


def merge_dare_ties(
    base: TensorMap, models: list[TensorMap], params: MergeParams, jobs: int = 1
) -> TensorMap:
    """TIES with the trim step replaced by DARE random drop-and-rescale."""
    return _merge_ties_like(base, models, params, SparsifyMode.DARE, jobs)


def merge_consensus_ta(
    base: TensorMap, models: list[TensorMap], params: MergeParams, jobs: int = 1
) -> TensorMap:
    """Task arithmetic masked to elements enough tasks claim as relevant.

    Per element, task i claims relevance where
    ``|tau_i| >= tall_threshold * |tau_sum - tau_i|``; elements claimed by at
    least ``consensus_k`` tasks keep their summed delta, the rest are zeroed.
    """
    if len(models) < 2:
        raise InvalidParameter("consensus task arithmetic requires at least two models")
    if not (1 <= params.consensus_k <= len(models)):
        raise InvalidConsensusK(
            f"consensus_k must be in [1, {len(models)}], got {params.consensus_k}"
        )
    if params.tall_threshold <= 0:
        raise InvalidParameter("tall_threshold must be positive")
    _require_compat([base, *models], "merge_consensus_ta")
    weights = _resolve_weights(params, len(models))
    threshold = np.float32(params.tall_threshold)
    scale = np.float32(params.lam)

    def one(name: str) -> Tensor:
        base32 = base[name].to_f32()
        taus = [m[name].to_f32() - base32 for m in models]
        mtl = np.zeros(base32.shape, dtype=np.float32)
        for w, tau in zip(weights, taus):
            mtl = mtl + np.float32(w) * tau
        counts = np.zeros(base32.shape, dtype=np.int64)
        for tau in taus:
            counts += np.abs(tau) >= threshold * np.abs(mtl - tau)
        kept = np.where(counts >= params.consensus_k, mtl, np.float32(0.0))
        return Tensor.from_values(base32 + scale * kept, base[name].dtype)

    return TensorMap(_map_tensors(base.names(), one, jobs))


def merge_della_linear(
    base: TensorMap, models: list[TensorMap], params: MergeParams, jobs: int = 1
) -> TensorMap:
    """Magnitude-rank random pruning per delta, then a plain weighted fuse
    (no sign election)."""
    if not models:
        raise InvalidParameter("merge_della_linear requires at least one model")
    _require_compat([base, *models], "merge_della_linear")
    weights = _resolve_weights(params, len(models))
    densities = _resolve_densities(params, len(models))
    total_w = sum(weights)
    if params.normalize and total_w == 0.0:
        raise ZeroWeightSum("weights sum to zero with normalize enabled")
    scale = np.float32(params.lam)

    def one(name: str) -> Tensor:
        base32 = base[name].to_f32()
        acc = np.zeros(base32.shape, dtype=np.float32)
        for i, model in enumerate(models):
            pruned = _sparsify_values(
                model[name].to_f32() - base32, name, SparsifyMode.MAGPRUNE,
                densities[i], params.epsilon_rank, params.seed,
            )
            acc = acc + np.float32(weights[i]) * pruned
        if params.normalize:
            acc = acc / np.float32(total_w)
        return Tensor.from_values(base32 + scale * acc, base[name].dtype)

    return TensorMap(_map_tensors(base.names(), one, jobs))


METHOD_NAMES = (
    "linear",
    "task_arithmetic",
    "ties",
    "dare_ties",
    "consensus_ta",
    "della_linear",
)


def merge_checkpoints(
    method: str,
    base: TensorMap | None,
    models: list[TensorMap],
    params: MergeParams,
    jobs: int = 1,
) -> TensorMap:
    """Dispatch a merge by method name. ``linear`` takes no base checkpoint."""
    if method not in METHOD_NAMES:
        raise InvalidParameter(f"unknown merge method {method!r}; expected one of {METHOD_NAMES}")
    if method == "linear":
        return merge_linear(models, params, jobs=jobs)
    if base is None:
        raise InvalidParameter(f"method {method!r} requires a base checkpoint")
    dispatch = {
        "task_arithmetic": merge_task_arithmetic,
        "ties": merge_ties,
        "dare_ties": merge_dare_ties,
        "consensus_ta": merge_consensus_ta,
        "della_linear": merge_della_linear,
    }
    return dispatch[method](base, models, params, jobs=jobs)
