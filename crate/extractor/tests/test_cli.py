import csv
import json
import subprocess

import pytest

from probegeom_extract.cli import main

from conftest import N_EMBD, N_LAYER


def write_rows(path, n_groups, **extra):
    rows = []
    for g in range(n_groups):
        rows.append({"question": f"What is {g} plus {g}?", "answer": str(2 * g), "label": 1, "group_id": g, **extra})
        rows.append({"question": f"What is {g} plus {g}?", "answer": f"{2 * g + 1} or so", "label": 0, "group_id": g, **extra})
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return rows


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


def test_two_row_job_matches_the_model_config(tmp_path, tiny_dir):
    write_rows(tmp_path / "rows.jsonl", 1)
    assert main(["extract", "--model", str(tiny_dir), "--rows", str(tmp_path / "rows.jsonl"),
                 "--out", str(tmp_path / "d"), "--model-tag", "tiny"]) == 0
    m = manifest(tmp_path / "d")
    assert (m["num_records"], m["hidden_dim"], m["num_layers"]) == (2, N_EMBD, N_LAYER)
    assert m["layer_indices"] == list(range(N_LAYER))
    assert m["model_tag"] == "tiny"


def test_paraphrase_flag_gives_five_times_the_records(tmp_path, tiny_dir):
    rows = write_rows(tmp_path / "rows.jsonl", 2)
    assert main(["extract", "--model", str(tiny_dir), "--rows", str(tmp_path / "rows.jsonl"),
                 "--out", str(tmp_path / "d"), "--paraphrase", "--layers", "1", "--keep-text"]) == 0
    assert manifest(tmp_path / "d")["num_records"] == 5 * len(rows)
    meta = [json.loads(line) for line in (tmp_path / "d" / "meta.jsonl").read_text().splitlines()]
    assert [r["paraphrase_id"] for r in meta] == [0, 1, 2, 3, 4] * len(rows)
    assert meta[1]["text"].endswith("The answer is: 0")


def test_input_problems_exit_one(tmp_path, tiny_dir, capsys):
    (tmp_path / "empty.jsonl").write_text("\n")
    base = ["--model", str(tiny_dir), "--out", str(tmp_path / "d")]
    assert main(["extract", "--rows", str(tmp_path / "empty.jsonl"), *base]) == 1
    assert "no rows" in capsys.readouterr().err
    assert not (tmp_path / "d").exists()
    assert main(["extract", "--rows", str(tmp_path / "missing.jsonl"), *base]) == 1
    write_rows(tmp_path / "rows.jsonl", 1)
    assert main(["extract", "--rows", str(tmp_path / "rows.jsonl"), *base, "--layers", "9"]) == 1
    assert main(["extract", "--rows", str(tmp_path / "rows.jsonl"), *base, "--batch-size", "0"]) == 1
    assert main(["extract", "--rows", str(tmp_path / "rows.jsonl"), "--out", "x"]) == 1
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0


def test_failed_rows_are_reported_and_skipped(tmp_path, tiny_dir, capsys):
    write_rows(tmp_path / "rows.jsonl", 1)
    with open(tmp_path / "rows.jsonl", "a") as f:
        f.write(json.dumps({"question": "q" * 400, "answer": "a", "label": 1, "group_id": 5}) + "\n")
    assert main(["extract", "--model", str(tiny_dir), "--rows", str(tmp_path / "rows.jsonl"),
                 "--out", str(tmp_path / "d")]) == 0
    assert "row 2:" in capsys.readouterr().err
    assert manifest(tmp_path / "d")["num_records"] == 2


def test_baselines_csv_joins_on_record_id(tmp_path, tiny_dir):
    write_rows(tmp_path / "rows.jsonl", 5)
    assert main(["baselines", "--model", str(tiny_dir), "--rows", str(tmp_path / "rows.jsonl"),
                 "--out", str(tmp_path / "b.csv")]) == 0
    assert main(["extract", "--model", str(tiny_dir), "--rows", str(tmp_path / "rows.jsonl"),
                 "--out", str(tmp_path / "d"), "--layers", "0"]) == 0
    with open(tmp_path / "b.csv") as f:
        table = list(csv.DictReader(f))
    assert list(table[0]) == ["record_id", "p_true", "nll", "token_entropy"]
    meta = [json.loads(line) for line in (tmp_path / "d" / "meta.jsonl").read_text().splitlines()]
    assert [int(r["record_id"]) for r in table] == [r["record_id"] for r in meta]
    assert len(table) == 10


def test_extract_bundle_steer_analyze(tmp_path, tiny_dir, engine):
    write_rows(tmp_path / "rows.jsonl", 20)
    dump, out = tmp_path / "d", tmp_path / "out"
    assert main(["extract", "--model", str(tiny_dir), "--rows", str(tmp_path / "rows.jsonl"),
                 "--out", str(dump), "--contrastive"]) == 0

    def run(*args):
        p = subprocess.run([engine, *args], capture_output=True, text=True)
        assert p.returncode == 0, p.stderr

    run("validate", "--dump", str(dump))
    run("steer-bundle", "--dump", str(dump), "--out", str(out), "--layer", "1", "--seed", "4")

    prompts = [{"item": i, "prompt": f"Q: What is {i} plus {i}?\nA:"} for i in range(3)]
    (tmp_path / "prompts.jsonl").write_text("".join(json.dumps(p) + "\n" for p in prompts))
    steer = ["steer-generate", "--bundle", str(out / "bundle"), "--prompts", str(tmp_path / "prompts.jsonl"),
             "--out", str(tmp_path / "steer")]
    assert main([*steer, "--model", str(tiny_dir), "--max-new-tokens", "3"]) == 0
    gens = [json.loads(line) for line in (tmp_path / "steer" / "generations.jsonl").read_text().splitlines()]
    assert len(gens) == 61 * len(prompts)

    # a stand-in judge: correctness alternates with item and alpha
    judged = [dict(g, correct=(g["item"] + int(g["alpha"] > 0)) % 2) for g in gens]
    (tmp_path / "judged.jsonl").write_text("".join(json.dumps(j) + "\n" for j in judged))
    assert main([*steer, "--judged", str(tmp_path / "judged.jsonl")]) == 0
    outcome = (tmp_path / "steer" / "outcome.jsonl").read_text().splitlines()
    assert len(outcome) == 61 * len(prompts)
    assert sum(json.loads(r)["direction"] != "baseline" for r in outcome) == 60 * len(prompts)
    run("steer-analyze", "--outcome", str(tmp_path / "steer" / "outcome.jsonl"), "--out", str(out))


def test_judged_bits_must_cover_the_sweep(tmp_path, tiny_dir, engine, capsys):
    write_rows(tmp_path / "rows.jsonl", 20)
    assert main(["extract", "--model", str(tiny_dir), "--rows", str(tmp_path / "rows.jsonl"),
                 "--out", str(tmp_path / "d"), "--layers", "2"]) == 0
    subprocess.run([engine, "steer-bundle", "--dump", str(tmp_path / "d"), "--out", str(tmp_path / "o"),
                    "--layer", "2"], check=True, capture_output=True)
    (tmp_path / "p.jsonl").write_text(json.dumps({"item": 0, "prompt": "hi"}) + "\n")
    (tmp_path / "j.jsonl").write_text(json.dumps({"item": 0, "direction": "learned", "alpha": -5.0, "correct": 1}) + "\n")
    assert main(["steer-generate", "--bundle", str(tmp_path / "o" / "bundle"), "--prompts", str(tmp_path / "p.jsonl"),
                 "--out", str(tmp_path / "s"), "--judged", str(tmp_path / "j.jsonl")]) == 1
    assert "no judgement" in capsys.readouterr().err
    assert not (tmp_path / "s" / "outcome.jsonl").exists()
