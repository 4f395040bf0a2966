"""Merge-workflow recipes: a JSON-described DAG of checkpoint stages.

Node kinds: EXTERNAL (a checkpoint file on disk), ALIGN_ARTIFACT (a checkpoint
produced by an out-of-scope alignment training run, treated as an opaque
file), and MERGE (dispatches to the merge engine). Execution is topological
with lexicographic tie-breaks among ready nodes and emits a lineage manifest
of content digests, so an unchanged recipe over unchanged inputs reproduces
identical outputs.
"""

from __future__ import annotations

import heapq
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import (
    DuplicateNodeId,
    InvalidRecipe,
    MissingInput,
    RecipeSyntaxError,
    UnknownField,
    UnknownMethod,
)
from .merge import METHOD_NAMES, MergeParams, merge_checkpoints
from .tensorstore import TensorMap, content_digest, load_checkpoint, save_checkpoint

NODE_KINDS = ("EXTERNAL", "MERGE", "ALIGN_ARTIFACT")

_PARAM_FIELDS = {
    "density": float,
    "lambda": float,
    "epsilon_rank": float,
    "tall_threshold": float,
    "consensus_k": int,
    "seed": int,
    "normalize": bool,
}


@dataclass(frozen=True)
class RecipeInput:
    ref: str
    weight: float = 1.0
    density: float | None = None


@dataclass(frozen=True)
class RecipeNode:
    id: str
    kind: str
    path: str | None = None
    method: str | None = None
    base: str | None = None
    inputs: tuple[RecipeInput, ...] = ()
    params: dict = field(default_factory=dict)

    def refs(self) -> list[str]:
        out = [inp.ref for inp in self.inputs]
        if self.base is not None:
            out.append(self.base)
        return out


@dataclass
class MergeRecipe:
    version: int
    nodes: list[RecipeNode]
    outputs: list[str]

    def node(self, node_id: str) -> RecipeNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    @property
    def node_ids(self) -> set[str]:
        return {node.id for node in self.nodes}


def _require_keys(obj: dict, allowed: set[str], required: set[str], context: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise UnknownField(f"{context}: unknown fields {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise RecipeSyntaxError(f"{context}: missing fields {sorted(missing)}")


def _parse_input(raw, context: str) -> RecipeInput:
    if not isinstance(raw, dict):
        raise RecipeSyntaxError(f"{context}: inputs must be objects")
    _require_keys(raw, {"ref", "weight", "density"}, {"ref"}, context)
    if not isinstance(raw["ref"], str) or not raw["ref"]:
        raise RecipeSyntaxError(f"{context}: input ref must be a non-empty string")
    weight = raw.get("weight", 1.0)
    density = raw.get("density")
    if not isinstance(weight, (int, float)) or isinstance(weight, bool):
        raise RecipeSyntaxError(f"{context}: weight must be a number")
    if density is not None and (not isinstance(density, (int, float)) or isinstance(density, bool)):
        raise RecipeSyntaxError(f"{context}: density must be a number")
    return RecipeInput(raw["ref"], float(weight), None if density is None else float(density))


def _parse_params(raw, context: str) -> dict:
    if not isinstance(raw, dict):
        raise RecipeSyntaxError(f"{context}: params must be an object")
    unknown = set(raw) - set(_PARAM_FIELDS)
    if unknown:
        raise UnknownField(f"{context}: unknown params {sorted(unknown)}")
    out = {}
    for key, value in raw.items():
        kind = _PARAM_FIELDS[key]
        if kind is bool:
            if not isinstance(value, bool):
                raise RecipeSyntaxError(f"{context}: param {key!r} must be a boolean")
            out[key] = value
        elif kind is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise RecipeSyntaxError(f"{context}: param {key!r} must be an integer")
            out[key] = value
        else:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise RecipeSyntaxError(f"{context}: param {key!r} must be a number")
            out[key] = float(value)
    return out


def _parse_node(raw) -> RecipeNode:
    if not isinstance(raw, dict):
        raise RecipeSyntaxError("nodes must be objects")
    node_id = raw.get("id")
    if not isinstance(node_id, str) or not node_id:
        raise RecipeSyntaxError("every node needs a non-empty string id")
    context = f"node {node_id!r}"
    kind = raw.get("kind")
    if kind not in NODE_KINDS:
        raise RecipeSyntaxError(f"{context}: kind must be one of {NODE_KINDS}, got {kind!r}")
    if kind in ("EXTERNAL", "ALIGN_ARTIFACT"):
        _require_keys(raw, {"id", "kind", "path"}, {"id", "kind", "path"}, context)
        if not isinstance(raw["path"], str) or not raw["path"]:
            raise RecipeSyntaxError(f"{context}: path must be a non-empty string")
        return RecipeNode(node_id, kind, path=raw["path"])

    method = raw.get("method")
    if method not in METHOD_NAMES:
        raise UnknownMethod(
            f"{context}: method must be one of {METHOD_NAMES}, got {method!r}"
        )
    allowed = {"id", "kind", "method", "base", "inputs", "params"}
    required = {"id", "kind", "method", "inputs"}
    if method != "linear":
        _require_keys(raw, allowed, required | {"base"}, context)
    else:
        if "base" in raw:
            raise RecipeSyntaxError(f"{context}: linear merges take no base")
        _require_keys(raw, allowed, required, context)
    base = raw.get("base")
    if base is not None and (not isinstance(base, str) or not base):
        raise RecipeSyntaxError(f"{context}: base must be a non-empty string")
    raw_inputs = raw.get("inputs")
    if not isinstance(raw_inputs, list) or not raw_inputs:
        raise RecipeSyntaxError(f"{context}: inputs must be a non-empty list")
    inputs = tuple(_parse_input(inp, context) for inp in raw_inputs)
    params = _parse_params(raw.get("params", {}), context)
    return RecipeNode(node_id, kind, method=method, base=base, inputs=inputs, params=params)


def parse_recipe(text: str) -> MergeRecipe:
    """Parse and structurally validate the JSON recipe format; unknown fields
    are rejected."""
    try:
        raw = json.loads(text)
    except ValueError as exc:
        raise RecipeSyntaxError(f"recipe is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise RecipeSyntaxError("recipe must be a JSON object")
    _require_keys(raw, {"version", "nodes", "outputs"}, {"version", "nodes"}, "recipe")
    if raw["version"] != 1:
        raise RecipeSyntaxError(f"unsupported recipe version {raw['version']!r}")
    if not isinstance(raw["nodes"], list):
        raise RecipeSyntaxError("nodes must be a list")
    nodes = [_parse_node(n) for n in raw["nodes"]]
    seen: set[str] = set()
    for node in nodes:
        if node.id in seen:
            raise DuplicateNodeId(f"node id {node.id!r} declared twice")
        seen.add(node.id)
    outputs = raw.get("outputs", [])
    if not isinstance(outputs, list) or not all(isinstance(o, str) for o in outputs):
        raise RecipeSyntaxError("outputs must be a list of node ids")
    return MergeRecipe(version=1, nodes=nodes, outputs=list(outputs))


def load_recipe(path: str | Path) -> MergeRecipe:
    return parse_recipe(Path(path).read_text(encoding="utf-8"))


@dataclass
class ValidationIssue:
    code: str
    where: str
    detail: str

    def __str__(self) -> str:
        return f"{self.code} at {self.where}: {self.detail}"


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, code: str, where: str, detail: str) -> None:
        self.issues.append(ValidationIssue(code, where, detail))

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "issues": [
                {"code": i.code, "where": i.where, "detail": i.detail} for i in self.issues
            ],
        }


def _check_cycles(recipe: MergeRecipe, report: ValidationReport) -> None:
    ids = recipe.node_ids
    graph = {
        node.id: [ref for ref in node.refs() if ref in ids] for node in recipe.nodes
    }
    WHITE, GREY, BLACK = 0, 1, 2
    state = {node_id: WHITE for node_id in graph}

    def visit(node_id: str, trail: list[str]) -> bool:
        state[node_id] = GREY
        for ref in graph[node_id]:
            if state[ref] == GREY:
                report.add("CycleDetected", node_id, f"cycle through {' -> '.join(trail + [ref])}")
                return True
            if state[ref] == WHITE and visit(ref, trail + [ref]):
                return True
        state[node_id] = BLACK
        return False

    for node_id in sorted(graph):
        if state[node_id] == WHITE and visit(node_id, [node_id]):
            return


def validate(recipe: MergeRecipe, base_dir: str | Path | None = None) -> ValidationReport:
    """Static checks: dangling references, cycles, parameter ranges. When
    ``base_dir`` is given, non-node refs must exist as files beneath it."""
    report = ValidationReport()
    ids = recipe.node_ids
    for out in recipe.outputs:
        if out not in ids:
            report.add("DanglingRef", "outputs", f"output {out!r} names no node")
    for node in recipe.nodes:
        if node.kind != "MERGE":
            continue
        for ref in node.refs():
            if ref in ids:
                continue
            if base_dir is not None and not (Path(base_dir) / ref).exists():
                report.add("DanglingRef", node.id, f"ref {ref!r} is neither a node nor a file")
        for inp in node.inputs:
            if inp.weight < 0:
                report.add("ParameterOutOfRange", node.id, f"weight {inp.weight} is negative")
            if inp.density is not None and not (0 < inp.density <= 1):
                report.add(
                    "ParameterOutOfRange", node.id, f"density {inp.density} outside (0, 1]"
                )
        params = node.params
        if "density" in params and not (0 < params["density"] <= 1):
            report.add("ParameterOutOfRange", node.id, f"density {params['density']} outside (0, 1]")
        if "lambda" in params and params["lambda"] < 0:
            report.add("ParameterOutOfRange", node.id, f"lambda {params['lambda']} is negative")
        if "epsilon_rank" in params and params["epsilon_rank"] < 0:
            report.add(
                "ParameterOutOfRange", node.id, f"epsilon_rank {params['epsilon_rank']} is negative"
            )
        if "tall_threshold" in params and params["tall_threshold"] <= 0:
            report.add(
                "ParameterOutOfRange", node.id,
                f"tall_threshold {params['tall_threshold']} must be positive",
            )
        if "consensus_k" in params and not (1 <= params["consensus_k"] <= len(node.inputs)):
            report.add(
                "ParameterOutOfRange", node.id,
                f"consensus_k {params['consensus_k']} outside [1, {len(node.inputs)}]",
            )
    _check_cycles(recipe, report)
    return report


def _effective_params(node: RecipeNode) -> MergeParams:
    params = node.params
    weights = tuple(inp.weight for inp in node.inputs)
    default_density = params.get("density", 1.0)
    densities = tuple(
        inp.density if inp.density is not None else default_density for inp in node.inputs
    )
    return MergeParams(
        weights=weights,
        density=default_density,
        lam=params.get("lambda", 1.0),
        epsilon_rank=params.get("epsilon_rank", 0.0),
        tall_threshold=params.get("tall_threshold", 1.0),
        consensus_k=params.get("consensus_k", 2),
        seed=params.get("seed", 0),
        normalize=params.get("normalize", True),
        densities=densities,
    )


@dataclass
class ManifestEntry:
    node_id: str
    method: str
    base: dict | None
    inputs: list[dict]
    params: dict
    output_digest: str
    duration_s: float

    def to_dict(self) -> dict:
        return {
            "node": self.node_id,
            "method": self.method,
            "base": self.base,
            "inputs": self.inputs,
            "params": self.params,
            "output_digest": self.output_digest,
            "duration_s": self.duration_s,
        }


@dataclass
class LineageManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    persisted: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "merges": [entry.to_dict() for entry in self.entries],
            "persisted": dict(self.persisted),
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


def _topological_order(recipe: MergeRecipe) -> list[str]:
    # Kahn's algorithm with a heap: among ready nodes, lexicographic id first.
    ids = recipe.node_ids
    pending = {
        node.id: {ref for ref in node.refs() if ref in ids} for node in recipe.nodes
    }
    dependants: dict[str, list[str]] = {node_id: [] for node_id in ids}
    for node_id, deps in pending.items():
        for dep in deps:
            dependants[dep].append(node_id)
    ready = [node_id for node_id, deps in pending.items() if not deps]
    heapq.heapify(ready)
    order = []
    while ready:
        node_id = heapq.heappop(ready)
        order.append(node_id)
        for dep in dependants[node_id]:
            pending[dep].discard(node_id)
            if not pending[dep]:
                heapq.heappush(ready, dep)
    return order


class _Resolver:
    def __init__(self, recipe: MergeRecipe, base_dir: Path):
        self.recipe = recipe
        self.base_dir = base_dir
        self.cache: dict[str, TensorMap] = {}
        self.digests: dict[str, str] = {}

    def resolve(self, ref: str) -> TensorMap:
        if ref in self.cache:
            return self.cache[ref]
        if ref in self.recipe.node_ids:
            node = self.recipe.node(ref)
            if node.kind == "MERGE":
                raise MissingInput(f"merge node {ref!r} was referenced before execution")
            path = self.base_dir / node.path
        else:
            path = self.base_dir / ref
        if not path.exists():
            raise MissingInput(f"checkpoint for {ref!r} not found at {path}")
        tensor_map = load_checkpoint(path)
        self.cache[ref] = tensor_map
        self.digests[ref] = content_digest(tensor_map)
        return tensor_map

    def digest_of(self, ref: str) -> str:
        if ref not in self.digests:
            self.digests[ref] = content_digest(self.cache[ref])
        return self.digests[ref]

    def store(self, node_id: str, tensor_map: TensorMap) -> str:
        self.cache[node_id] = tensor_map
        digest = content_digest(tensor_map)
        self.digests[node_id] = digest
        return digest


def execute(
    recipe: MergeRecipe,
    workdir: str | Path,
    base_dir: str | Path | None = None,
    jobs: int = 1,
) -> LineageManifest:
    """Run every merge stage in dependency order, persist the declared outputs
    under ``workdir`` as ``<id>.stc``, and write ``manifest.json`` there."""
    workdir = Path(workdir)
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    report = validate(recipe, base_dir=base_dir)
    if not report.ok:
        raise InvalidRecipe("; ".join(str(issue) for issue in report.issues))
    workdir.mkdir(parents=True, exist_ok=True)
    resolver = _Resolver(recipe, base_dir)
    manifest = LineageManifest()

    for node_id in _topological_order(recipe):
        node = recipe.node(node_id)
        if node.kind != "MERGE":
            continue
        start = time.perf_counter()
        params = _effective_params(node)
        models = [resolver.resolve(inp.ref) for inp in node.inputs]
        base_map = resolver.resolve(node.base) if node.base is not None else None
        merged = merge_checkpoints(node.method, base_map, models, params, jobs=jobs)
        digest = resolver.store(node.id, merged)
        entry = ManifestEntry(
            node_id=node.id,
            method=node.method,
            base=None
            if node.base is None
            else {"ref": node.base, "digest": resolver.digest_of(node.base)},
            inputs=[
                {"ref": inp.ref, "digest": resolver.digest_of(inp.ref)} for inp in node.inputs
            ],
            params={
                "weights": list(params.weights),
                "densities": list(params.densities),
                "lambda": params.lam,
                "epsilon_rank": params.epsilon_rank,
                "tall_threshold": params.tall_threshold,
                "consensus_k": params.consensus_k,
                "seed": params.seed,
                "normalize": params.normalize,
            },
            output_digest=digest,
            duration_s=time.perf_counter() - start,
        )
        manifest.entries.append(entry)

    for out in recipe.outputs:
        tensor_map = resolver.resolve(out)
        save_checkpoint(tensor_map, workdir / f"{out}.stc")
        manifest.persisted[out] = resolver.digest_of(out)

    manifest.write(workdir / "manifest.json")
    return manifest


def builtin_recipe_names() -> list[str]:
    entries = resources.files("ptkit.data.recipes")
    return sorted(p.name[: -len(".json")] for p in entries.iterdir() if p.name.endswith(".json"))


def builtin_recipe(name: str) -> str:
    """Text of a bundled workflow recipe (see ``builtin_recipe_names``)."""
    return resources.files("ptkit.data.recipes").joinpath(f"{name}.json").read_text("utf-8")
