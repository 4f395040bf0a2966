"""Command-line interface: exit codes, outputs, JSON mode."""

import json

import numpy as np
import pytest

from ptkit.cli import run, token_count
from ptkit.tensorstore import TensorMap, load_checkpoint, save_checkpoint
from test_recipes import LLAMA_EXTERNALS, write_workflow_inputs


def ckpt(tmp_path, name, values, seed=None):
    rng = np.random.default_rng(seed if seed is not None else abs(hash(name)) % 2**32)
    arrays = {"w": np.asarray(values, dtype=np.float32)}
    path = tmp_path / name
    save_checkpoint(TensorMap.from_arrays(arrays), path)
    return path


def test_token_count_parses_scientific_notation():
    assert token_count("200e9") == 200_000_000_000
    assert token_count("15") == 15
    with pytest.raises(Exception):
        token_count("1.5")
    with pytest.raises(Exception):
        token_count("abc")


def test_merge_subcommand_writes_output(tmp_path, capsys):
    base = ckpt(tmp_path, "cpt.stc", [0.0, 0.0, 0.0])
    s1 = ckpt(tmp_path, "s1.stc", [1.0, -2.0, 0.0])
    s2 = ckpt(tmp_path, "s2.stc", [3.0, 1.0, 0.0])
    out = tmp_path / "m1.stc"
    code = run(
        [
            "merge", "--method", "dare_ties", "--base", str(base),
            "--in", str(s1), "--in", str(s2),
            "--weight", "1", "--weight", "1", "--density", "1",
            "--out", str(out),
        ]
    )
    assert code == 0
    merged = load_checkpoint(out)
    assert np.array_equal(merged["w"].data, np.array([2.0, -2.0, 0.0], dtype=np.float32))


def test_merge_single_weight_broadcasts(tmp_path):
    base = ckpt(tmp_path, "cpt.stc", [0.0, 0.0])
    s1 = ckpt(tmp_path, "s1.stc", [1.0, -2.0])
    s2 = ckpt(tmp_path, "s2.stc", [3.0, 1.0])
    out = tmp_path / "m1.stc"
    code = run(
        [
            "merge", "--method", "dare_ties", "--base", str(base),
            "--in", str(s1), "--in", str(s2),
            "--weight", "1", "--density", "1", "--out", str(out),
        ]
    )
    assert code == 0
    assert out.exists()


def test_merge_unknown_method_is_usage_error(tmp_path, capsys):
    code = run(["merge", "--method", "foo", "--in", "x.stc", "--out", "y.stc"])
    assert code == 2
    assert "dare_ties" in capsys.readouterr().err  # usage names the valid set


def test_merge_incompatible_inputs_is_domain_error(tmp_path, capsys):
    a = ckpt(tmp_path, "a.stc", [1.0, 2.0])
    b = ckpt(tmp_path, "b.stc", [1.0, 2.0, 3.0])
    code = run(["merge", "--method", "linear", "--in", str(a), "--in", str(b),
                "--out", str(tmp_path / "o.stc")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_schedule_plateau_value(capsys):
    assert run(["schedule", "--total", "200e9", "--at", "100e9"]) == 0
    assert float(capsys.readouterr().out.strip()) == 1e-5


def test_schedule_out_of_range_is_domain_error(capsys):
    assert run(["schedule", "--total", "100", "--at", "101"]) == 1


def test_schedule_json_document(capsys):
    assert run(["schedule", "--total", "200e9", "--at", "200e9", "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["lr"] == 1e-7


def test_schedule_table_csv(tmp_path):
    out = tmp_path / "table.csv"
    assert run(["schedule", "--total", "1000", "--table", "--points", "10",
                "--out", str(out)]) == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "position,lr"
    assert len(rows) == 12
    assert rows[1].startswith("0.0,")


def test_plan_defaults_to_bundled_table(capsys):
    assert run(["plan", "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["category_totals"] == {
        "SEA": 110_000_000_000,
        "EN": 50_000_000_000,
        "CODE": 40_000_000_000,
    }


def test_plan_csv_output(capsys):
    assert run(["plan", "--budget", "200e9"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "name,category,tokens"
    assert len(lines) == 10


def test_plan_infeasible_budget_is_domain_error(tmp_path, capsys):
    sources = {"sources": [{"name": "only", "category": "SEA", "available_tokens": 10}]}
    src = tmp_path / "sources.json"
    src.write_text(json.dumps(sources))
    code = run(["plan", "--sources", str(src), "--ratio", "SEA=1.0", "--budget", "100"])
    assert code == 1


def test_plan_emits_train_config(tmp_path):
    config = tmp_path / "train.json"
    assert run(["plan", "--train-config", str(config), "--out", str(tmp_path / "p.csv")]) == 0
    parsed = json.loads(config.read_text())
    assert parsed["optimizer"]["eps"] == 1e-15
    assert parsed["schedule"]["table"][0]["lr"] == 0.0


def test_recipe_validate_and_run(tmp_path, capsys):
    write_workflow_inputs(tmp_path, LLAMA_EXTERNALS, seed=4)
    recipe_path = tmp_path / "workflow.json"
    from ptkit.recipes import builtin_recipe

    recipe_path.write_text(builtin_recipe("llama_post_training"), encoding="utf-8")
    assert run(["recipe", str(recipe_path), "--validate-only"]) == 0
    capsys.readouterr()
    workdir = tmp_path / "out"
    assert run(["recipe", str(recipe_path), "--workdir", str(workdir), "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert [m["node"] for m in payload["merges"]] == ["merge1", "merge2", "final"]
    assert (workdir / "final.stc").exists()


def test_recipe_with_unknown_method_is_domain_error(tmp_path, capsys):
    recipe_path = tmp_path / "bad.json"
    recipe_path.write_text('{"version": 1, "nodes": [{"id": "m", "kind": "MERGE", '
                           '"method": "foo", "inputs": [{"ref": "x"}]}]}')
    assert run(["recipe", str(recipe_path), "--validate-only"]) == 1


def test_filter_pipeline(tmp_path, capsys):
    from test_langid import LATIN, THAI, make_doc
    import random

    rng = random.Random(0)
    train = tmp_path / "train.jsonl"
    with train.open("w", encoding="utf-8") as fh:
        for i in range(30):
            fh.write(json.dumps({"text": make_doc(THAI, rng), "lang": "th"}, ensure_ascii=False) + "\n")
            fh.write(json.dumps({"text": make_doc(LATIN, rng), "lang": "en"}, ensure_ascii=False) + "\n")
    docs = tmp_path / "docs.jsonl"
    with docs.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"id": "keep", "text": make_doc(THAI, rng), "lang": "th"}, ensure_ascii=False) + "\n")
        fh.write(json.dumps({"id": "drop", "text": make_doc(LATIN, rng), "lang": "fr"}, ensure_ascii=False) + "\n")
        fh.write(json.dumps({"id": "empty", "text": ""}) + "\n")
    out = tmp_path / "kept.jsonl"
    stats_path = tmp_path / "stats.json"
    code = run(
        ["filter", "--input", str(docs), "--output", str(out), "--stats", str(stats_path),
         "--languages", "th", "--tau", "0.5", "--train", str(train), "--json"]
    )
    assert code == 0
    kept = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert [d["id"] for d in kept] == ["keep"]
    stats = json.loads(stats_path.read_text())
    assert stats["retained"] == 1
    assert stats["dropped"]["malformed"] == 1


def test_filter_requires_model_or_training_data(tmp_path):
    docs = tmp_path / "docs.jsonl"
    docs.write_text("")
    assert run(["filter", "--input", str(docs), "--output", str(tmp_path / "o.jsonl"),
                "--languages", "th"]) == 2


def test_bpe_train_and_tokenize(tmp_path, capsys):
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("banana bandana banana cabana", encoding="utf-8")
    model_path = tmp_path / "merges.txt"
    assert run(["bpe-train", "--input", str(corpus), "--merges", "8",
                "--out", str(model_path)]) == 0
    capsys.readouterr()
    assert run(["tokenize", "--model", str(model_path), "--text", "banana cab",
                "--dropout", "0", "--json"]) == 0
    tokens = json.loads(capsys.readouterr().out)["tokens"]
    assert "".join(tokens) == "banana cab"


def test_pairs_and_simpo_eval(tmp_path, capsys):
    responses = tmp_path / "responses.jsonl"
    with responses.open("w") as fh:
        fh.write(
            json.dumps(
                {
                    "prompt": "q",
                    "responses": [
                        {"text": "good", "reward": 0.9, "token_logprobs": [-0.5, -0.5]},
                        {"text": "bad", "reward": 0.2, "token_logprobs": [-1.0] * 4},
                        {"text": "mid", "reward": 0.5, "token_logprobs": [-0.7]},
                    ],
                }
            )
            + "\n"
        )
    pairs_path = tmp_path / "pairs.jsonl"
    assert run(["pairs", "--input", str(responses), "--output", str(pairs_path)]) == 0
    pair = json.loads(pairs_path.read_text().strip())
    assert pair["chosen"]["text"] == "good"
    assert pair["rejected"]["text"] == "bad"
    capsys.readouterr()
    assert run(["simpo-eval", "--input", str(pairs_path), "--beta", "2.0",
                "--gamma", "0.5", "--json"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["pairs"] == 1
    assert stats["mean_loss"] == pytest.approx(0.4740769841801067, abs=1e-9)


def test_inspect(tmp_path, capsys):
    path = ckpt(tmp_path, "model.stc", [1.0, 2.0])
    assert run(["inspect", str(path), "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["tensors"][0]["name"] == "w"
    assert payload["tensors"][0]["dtype"] == "F32"


def test_unknown_subcommand_is_usage_error():
    assert run(["transmogrify"]) == 2


def test_missing_file_is_domain_error(tmp_path):
    assert run(["inspect", str(tmp_path / "missing.stc")]) == 1
