"""``ptk``: the command-line entry point.

Exit codes: 0 on success, 1 on domain errors (incompatible checkpoints,
infeasible budgets, missing inputs, ...), 2 on usage errors. With ``--json``
every subcommand emits a single JSON document on stdout and keeps diagnostics
on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .errors import ToolkitError
from .merge import METHOD_NAMES, MergeParams, merge_checkpoints
from .planning import (
    OptimizerConfig,
    WsdSchedule,
    builtin_cpt_sources,
    emit_train_config,
    load_sources,
    lr_at,
    plan_mix,
    schedule_table,
)
from .tensorstore import content_digest, load_checkpoint, save_checkpoint


def token_count(value: str) -> int:
    """Parse integers given plainly or in scientific notation (e.g. 200e9)."""
    try:
        parsed = Decimal(value)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"{value!r} is not a number")
    if parsed != parsed.to_integral_value():
        raise argparse.ArgumentTypeError(f"{value!r} is not an integral token count")
    return int(parsed)


def ratio_pair(value: str) -> tuple[str, float]:
    name, sep, frac = value.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected CATEGORY=FRACTION, got {value!r}")
    try:
        return name, float(frac)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{frac!r} is not a number")


def _emit(args, payload: dict, text: str | None = None) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, sort_keys=True))
    elif text is not None:
        print(text)


def _write_csv(path_or_stdout, rows: list[dict], fieldnames: list[str]) -> None:
    if path_or_stdout is None:
        writer = csv.DictWriter(sys.stdout, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    else:
        with open(path_or_stdout, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(rows)


# --- subcommand handlers ---


def _cmd_merge(args) -> int:
    weights = args.weight
    if weights and len(weights) == 1 and len(args.inputs) > 1:
        weights = weights * len(args.inputs)  # one --weight broadcasts to all inputs
    params = MergeParams(
        weights=tuple(weights) if weights else None,
        density=args.density,
        lam=args.lam,
        epsilon_rank=args.epsilon_rank,
        tall_threshold=args.tall_threshold,
        consensus_k=args.consensus_k,
        seed=args.seed,
        normalize=not args.no_normalize,
    )
    base = load_checkpoint(args.base) if args.base else None
    models = [load_checkpoint(p) for p in args.inputs]
    merged = merge_checkpoints(args.method, base, models, params, jobs=args.jobs)
    save_checkpoint(merged, args.out)
    digest = content_digest(merged)
    _emit(
        args,
        {"out": str(args.out), "digest": digest, "tensors": len(merged)},
        f"wrote {args.out} ({len(merged)} tensors, digest {digest[:12]})",
    )
    return 0


def _cmd_recipe(args) -> int:
    from . import recipes

    recipe = recipes.load_recipe(args.file)
    base_dir = Path(args.base_dir) if args.base_dir else Path(args.file).resolve().parent
    report = recipes.validate(recipe, base_dir=base_dir)
    if args.validate_only:
        payload = report.to_dict()
        lines = ["recipe is valid"] if report.ok else [str(issue) for issue in report.issues]
        _emit(args, payload, "\n".join(lines))
        return 0 if report.ok else 1
    manifest = recipes.execute(recipe, args.workdir, base_dir=base_dir, jobs=args.jobs)
    payload = manifest.to_dict()
    lines = [
        f"{entry.node_id}: {entry.method} -> {entry.output_digest[:12]}"
        for entry in manifest.entries
    ]
    lines.append(f"manifest written to {Path(args.workdir) / 'manifest.json'}")
    _emit(args, payload, "\n".join(lines))
    return 0


def _cmd_plan(args) -> int:
    sources = load_sources(args.sources) if args.sources else builtin_cpt_sources()
    ratios = dict(args.ratio) if args.ratio else {"SEA": 0.55, "EN": 0.25, "CODE": 0.20}
    plan = plan_mix(sources, ratios, args.budget)
    rows = [
        {"name": a.name, "category": a.category, "tokens": a.tokens}
        for a in plan.allocations
    ]
    if args.out or not args.json:
        _write_csv(args.out, rows, ["name", "category", "tokens"])
    if args.figure:
        from . import report as report_mod

        report_mod.save_mix_figure(plan, args.figure)
        print(f"figure written to {args.figure}", file=sys.stderr)
    if args.train_config:
        schedule = _schedule_from_args(args)
        opt = OptimizerConfig(
            beta1=args.beta1, beta2=args.beta2, eps=args.eps, weight_decay=args.weight_decay
        )
        Path(args.train_config).write_text(
            emit_train_config(plan, schedule, opt) + "\n", encoding="utf-8"
        )
        print(f"training config written to {args.train_config}", file=sys.stderr)
    if args.json:
        print(json.dumps(plan.to_dict(), sort_keys=True))
    return 0


def _schedule_from_args(args) -> WsdSchedule:
    return WsdSchedule(
        total=float(args.total),
        warmup_fraction=args.warmup_frac,
        decay_fraction=args.decay_frac,
        eta_max=args.max_lr,
        eta_min=args.min_lr,
        decay_shape=args.shape,
    )


def _cmd_schedule(args) -> int:
    schedule = _schedule_from_args(args)
    if args.figure:
        from . import report as report_mod

        report_mod.save_schedule_figure(schedule, args.figure)
        print(f"figure written to {args.figure}", file=sys.stderr)
    if args.table:
        table = schedule_table(schedule, args.points)
        if args.json:
            print(json.dumps({"table": table}, sort_keys=True))
        else:
            rows = [{"position": row["position"], "lr": repr(row["lr"])} for row in table]
            _write_csv(args.out, rows, ["position", "lr"])
        return 0
    if args.at is None:
        if args.figure:
            return 0
        print("error: provide --at POSITION or --table", file=sys.stderr)
        return 2
    lr = lr_at(schedule, float(args.at))
    _emit(args, {"position": float(args.at), "lr": lr}, f"{lr:g}")
    return 0


def _cmd_filter(args) -> int:
    from .corpus import Document, LangIdModel, filter_docs, train_langid

    if args.model:
        model = LangIdModel.load(args.model)
    elif args.train:
        labeled = []
        with open(args.train, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                raw = json.loads(line)
                labeled.append((raw["text"], raw["lang"]))
        model = train_langid(labeled)
    else:
        print("error: provide --model or --train for language identification", file=sys.stderr)
        return 2
    if args.save_model:
        model.save(args.save_model)

    docs = []
    with open(args.input, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            docs.append(Document(raw.get("id", ""), raw.get("text", ""), raw.get("lang")))
    langset = {code.strip() for code in args.languages.split(",") if code.strip()}
    retained, stats = filter_docs(
        docs,
        langset,
        model,
        args.tau,
        check_classifier=not args.no_classifier_check,
        check_metadata=not args.no_metadata_check,
        jobs=args.jobs,
    )
    with open(args.output, "w", encoding="utf-8") as fh:
        for doc in retained:
            record = {"id": doc.id, "text": doc.text}
            if doc.metadata_lang is not None:
                record["lang"] = doc.metadata_lang
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    stats_path = args.stats or str(Path(args.output).with_name("stats.json"))
    Path(stats_path).write_text(
        json.dumps(stats.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    if args.figure:
        from . import report as report_mod

        report_mod.save_filter_figure(stats, args.figure)
        print(f"figure written to {args.figure}", file=sys.stderr)
    _emit(
        args,
        stats.to_dict(),
        f"retained {stats.retained}/{stats.total} documents; stats in {stats_path}",
    )
    return 0


def _cmd_bpe_train(args) -> int:
    from .corpus import learn_bpe, save_bpe_model

    corpus = Path(args.input).read_text(encoding="utf-8")
    model = learn_bpe(corpus, args.merges)
    save_bpe_model(model, args.out)
    _emit(
        args,
        {"merges": len(model.merges), "out": str(args.out)},
        f"learned {len(model.merges)} merges -> {args.out}",
    )
    return 0


def _cmd_tokenize(args) -> int:
    from .corpus import load_bpe_model, tokenize_bpe

    model = load_bpe_model(args.model)
    text = args.text if args.text is not None else Path(args.input).read_text(encoding="utf-8")
    tokens = tokenize_bpe(model, text, dropout_p=args.dropout, seed=args.seed)
    if args.json:
        print(json.dumps({"tokens": tokens}, ensure_ascii=False))
    else:
        for token in tokens:
            print(json.dumps(token, ensure_ascii=False))
    return 0


def _load_response_records(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def _cmd_pairs(args) -> int:
    from .prefs import ScoredResponse, build_pairs

    count = 0
    with open(args.output, "w", encoding="utf-8") as out:
        for record in _load_response_records(args.input):
            responses = [
                ScoredResponse(r["text"], float(r["reward"]), tuple(r["token_logprobs"]))
                for r in record["responses"]
            ]
            pair = build_pairs(record["prompt"], responses)
            out.write(
                json.dumps(
                    {
                        "prompt": pair.prompt,
                        "chosen": {
                            "text": pair.chosen.text,
                            "reward": pair.chosen.reward,
                            "token_logprobs": list(pair.chosen.token_logprobs),
                        },
                        "rejected": {
                            "text": pair.rejected.text,
                            "reward": pair.rejected.reward,
                            "token_logprobs": list(pair.rejected.token_logprobs),
                        },
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
            count += 1
    _emit(args, {"pairs": count, "out": str(args.output)}, f"wrote {count} pairs -> {args.output}")
    return 0


def _cmd_simpo_eval(args) -> int:
    from .prefs import PreferencePair, ScoredResponse, SimpoParams, simpo_loss

    params = SimpoParams(beta=args.beta, gamma=args.gamma)
    losses = []
    for record in _load_response_records(args.input):
        chosen = ScoredResponse(
            record["chosen"]["text"],
            float(record["chosen"].get("reward", 0.0)),
            tuple(record["chosen"]["token_logprobs"]),
        )
        rejected = ScoredResponse(
            record["rejected"]["text"],
            float(record["rejected"].get("reward", 0.0)),
            tuple(record["rejected"]["token_logprobs"]),
        )
        losses.append(simpo_loss(PreferencePair(record["prompt"], chosen, rejected), params))
    if not losses:
        print("error: no pairs found in input", file=sys.stderr)
        return 1
    stats = {
        "pairs": len(losses),
        "mean_loss": sum(losses) / len(losses),
        "min_loss": min(losses),
        "max_loss": max(losses),
        "beta": args.beta,
        "gamma": args.gamma,
    }
    if args.figure:
        from . import report as report_mod

        report_mod.save_loss_figure(losses, args.figure)
        print(f"figure written to {args.figure}", file=sys.stderr)
    text = (
        f"pairs={stats['pairs']} mean={stats['mean_loss']:.6f} "
        f"min={stats['min_loss']:.6f} max={stats['max_loss']:.6f}"
    )
    _emit(args, stats, text)
    return 0


def _cmd_inspect(args) -> int:
    tensor_map = load_checkpoint(args.file, allow_nonfinite=True)
    rows = [
        {
            "name": name,
            "dtype": tensor.dtype,
            "shape": list(tensor.shape),
            "elements": tensor.element_count,
        }
        for name, tensor in tensor_map.items()
    ]
    payload = {
        "tensors": rows,
        "metadata": tensor_map.metadata or {},
        "digest": content_digest(tensor_map),
    }
    lines = [f"{r['name']}\t{r['dtype']}\t{r['shape']}" for r in rows]
    if tensor_map.metadata:
        lines.append(f"metadata: {tensor_map.metadata}")
    _emit(args, payload, "\n".join(lines) if lines else "(empty checkpoint)")
    return 0


# --- parser wiring ---


def _add_json_flag(parser) -> None:
    parser.add_argument("--json", action="store_true", help="emit a single JSON document on stdout")


def _add_schedule_flags(parser) -> None:
    parser.add_argument("--total", type=token_count, default=200_000_000_000,
                        help="schedule length in tokens or steps (default 200e9)")
    parser.add_argument("--warmup-frac", type=float, default=0.10)
    parser.add_argument("--decay-frac", type=float, default=0.10)
    parser.add_argument("--max-lr", type=float, default=1e-5)
    parser.add_argument("--min-lr", type=float, default=1e-7)
    parser.add_argument("--shape", choices=("linear", "cosine"), default="linear")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptk",
        description="Post-training toolkit: merging, recipes, planning, corpus, preferences.",
        epilog="exit codes: 0 success, 1 domain error, 2 usage error",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("merge", help="merge checkpoints with one method")
    p.add_argument("--method", required=True, choices=METHOD_NAMES)
    p.add_argument("--base", help="base checkpoint (not used by 'linear')")
    p.add_argument("--in", dest="inputs", action="append", required=True, metavar="FILE",
                   help="input checkpoint; repeat per model")
    p.add_argument("--weight", type=float, action="append", help="per-input weight; repeat per model")
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="scale applied to the fused delta")
    p.add_argument("--epsilon-rank", type=float, default=0.0)
    p.add_argument("--tall-threshold", type=float, default=1.0)
    p.add_argument("--consensus-k", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_json_flag(p)
    p.set_defaults(func=_cmd_merge)

    p = sub.add_parser("recipe", help="validate or execute a merge workflow")
    p.add_argument("file", help="recipe JSON file")
    p.add_argument("--workdir", default="recipe-out", help="output directory for artifacts")
    p.add_argument("--base-dir", help="directory checkpoint paths resolve against "
                                      "(default: the recipe's directory)")
    p.add_argument("--validate-only", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    _add_json_flag(p)
    p.set_defaults(func=_cmd_recipe)

    p = sub.add_parser("plan", help="allocate a token budget across corpus sources")
    p.add_argument("--sources", help="JSON source table (default: bundled table)")
    p.add_argument("--ratio", type=ratio_pair, action="append", metavar="CAT=FRACTION",
                   help="category ratio; repeat per category (default SEA=0.55 EN=0.25 CODE=0.20)")
    p.add_argument("--budget", type=token_count, default=200_000_000_000)
    p.add_argument("--out", help="write the allocation table as CSV (default: stdout)")
    p.add_argument("--figure", help="render the allocation chart to this file")
    p.add_argument("--train-config", help="write the full training-config JSON here")
    _add_schedule_flags(p)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.95)
    p.add_argument("--eps", type=float, default=1e-15)
    p.add_argument("--weight-decay", type=float, default=0.1)
    _add_json_flag(p)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("schedule", help="evaluate the warmup-stable-decay learning rate")
    _add_schedule_flags(p)
    p.add_argument("--at", type=token_count, help="position to evaluate")
    p.add_argument("--table", action="store_true", help="emit the sampled schedule as CSV")
    p.add_argument("--points", type=int, default=100, help="table resolution (rows - 1)")
    p.add_argument("--out", help="CSV destination for --table (default: stdout)")
    p.add_argument("--figure", help="render the schedule curve to this file")
    _add_json_flag(p)
    p.set_defaults(func=_cmd_schedule)

    p = sub.add_parser("filter", help="language-filter a newline-delimited JSON corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--stats", help="stats JSON path (default: stats.json next to output)")
    p.add_argument("--languages", required=True, help="comma-separated language codes to keep")
    p.add_argument("--tau", type=float, default=0.5, help="confidence threshold")
    p.add_argument("--train", help="labeled ndjson ({text, lang}) to train the classifier")
    p.add_argument("--model", help="load a trained classifier instead of training")
    p.add_argument("--save-model", help="save the classifier for reuse")
    p.add_argument("--no-metadata-check", action="store_true")
    p.add_argument("--no-classifier-check", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--figure", help="render the retention chart to this file")
    _add_json_flag(p)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("bpe-train", help="learn a BPE merge table from a text corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--merges", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_json_flag(p)
    p.set_defaults(func=_cmd_bpe_train)

    p = sub.add_parser("tokenize", help="apply BPE with optional merge dropout")
    p.add_argument("--model", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--text")
    group.add_argument("--input")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    _add_json_flag(p)
    p.set_defaults(func=_cmd_tokenize)

    p = sub.add_parser("pairs", help="build preference pairs from scored responses")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_json_flag(p)
    p.set_defaults(func=_cmd_pairs)

    p = sub.add_parser("simpo-eval", help="evaluate the preference objective over pairs")
    p.add_argument("--input", required=True)
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--figure", help="render the loss histogram to this file")
    _add_json_flag(p)
    p.set_defaults(func=_cmd_simpo_eval)

    p = sub.add_parser("inspect", help="list tensors and metadata of a checkpoint")
    p.add_argument("file")
    _add_json_flag(p)
    p.set_defaults(func=_cmd_inspect)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # surfaced as an exit code, never a crash
        traceback.print_exc(file=sys.stderr)
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))
