import json
import subprocess
import sys

import pytest

from recafr.cli import run
from recafr.synthetic import SyntheticSpec, two_cluster_dataset, write_dataset


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("data")
    rows, store = two_cluster_dataset(
        SyntheticSpec(num_users=14, num_items=14, dim=8, interactions_per_user=7, seed=21)
    )
    write_dataset(rows, store, outdir)
    return outdir


@pytest.fixture(scope="module")
def prepared_dir(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("prepared")
    code = run(
        ["prepare", "--in", str(dataset_dir / "interactions.tsv"), "--kcore", "2", "--seed", "7", "--out", str(out)]
    )
    assert code == 0
    return out


FAST = ["--set", "dim=8", "--set", "epochs=2", "--set", "batch_size=32", "--set", "lambda1=1", "--set", "patience=50"]


def test_prepare_writes_splits_maps_and_manifest(prepared_dir):
    for name in ("train.tsv", "valid.tsv", "test.tsv", "users.map.tsv", "items.map.tsv", "reviews.map.tsv", "run_manifest.json"):
        assert (prepared_dir / name).exists()
    manifest = json.loads((prepared_dir / "run_manifest.json").read_text())
    assert manifest["verb"] == "prepare"
    assert manifest["seeds"] == {"seed": 7}
    assert manifest["input_digests"]


def test_prepare_review_ids_match_embedding_file(dataset_dir, prepared_dir):
    from recafr.corpus import load_embedding_file, load_prepared

    table = load_prepared(prepared_dir)
    store = load_embedding_file(dataset_dir / "reviews.remb")
    referenced = {t.review_id for t in table.triples if t.review_id is not None}
    assert referenced <= set(store.vectors)


def test_train_then_evaluate(dataset_dir, prepared_dir, tmp_path):
    train_out = tmp_path / "run"
    code = run(
        ["train", "--data", str(prepared_dir), "--embeddings", str(dataset_dir / "reviews.remb"),
         "--out", str(train_out), "--dump-views", *FAST]
    )
    assert code == 0
    assert (train_out / "checkpoint.rckp").exists()
    assert (train_out / "views.tsv").exists()
    history = [json.loads(line) for line in (train_out / "history.jsonl").read_text().splitlines()]
    assert len(history) == 2
    assert set(history[0]) == {"epoch", "train_loss", "L_cf", "L_rev", "L_align", "valid_ndcg5"}
    manifest = json.loads((train_out / "run_manifest.json").read_text())
    assert manifest["config"]["epochs"] == 2

    eval_out = tmp_path / "eval"
    code = run(
        ["evaluate", "--data", str(prepared_dir), "--checkpoint", str(train_out / "checkpoint.rckp"),
         "--out", str(eval_out)]
    )
    assert code == 0
    metrics = json.loads((eval_out / "metrics.json").read_text())
    assert set(metrics) == {"5", "20"}
    assert 0.0 <= metrics["5"]["recall"] <= 1.0


def test_train_reruns_bit_identical(dataset_dir, prepared_dir, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(
            ["train", "--data", str(prepared_dir), "--embeddings", str(dataset_dir / "reviews.remb"),
             "--out", str(out), *FAST]
        ) == 0
        outs.append(out)
    assert (outs[0] / "checkpoint.rckp").read_bytes() == (outs[1] / "checkpoint.rckp").read_bytes()
    assert (outs[0] / "history.jsonl").read_text() == (outs[1] / "history.jsonl").read_text()


def test_config_file_and_override_precedence(dataset_dir, prepared_dir, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("dim = 8\nepochs = 1\nbatch_size = 32\nlambda1 = 1\n", encoding="utf-8")
    out = tmp_path / "run"
    code = run(
        ["train", "--data", str(prepared_dir), "--embeddings", str(dataset_dir / "reviews.remb"),
         "--config", str(cfg), "--set", "epochs=2", "--out", str(out)]
    )
    assert code == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["config"]["epochs"] == 2  # override beats file
    assert manifest["config"]["dim"] == 8


def test_unknown_verb_is_usage_error():
    assert run(["frobnicate"]) == 2


def test_missing_required_flag_is_usage_error():
    assert run(["prepare", "--kcore", "2"]) == 2


def test_runtime_error_exit_code(tmp_path):
    assert run(["prepare", "--in", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "o")]) == 1


def test_bad_config_value_is_runtime_error(dataset_dir, prepared_dir, tmp_path):
    code = run(
        ["train", "--data", str(prepared_dir), "--embeddings", str(dataset_dir / "reviews.remb"),
         "--out", str(tmp_path / "x"), "--set", "epochs=zero"]
    )
    assert code == 1


def test_ablate_emits_comparison_table(dataset_dir, prepared_dir, tmp_path):
    out = tmp_path / "ablate"
    code = run(
        ["ablate", "--data", str(prepared_dir), "--embeddings", str(dataset_dir / "reviews.remb"),
         "--out", str(out), *FAST]
    )
    assert code == 0
    lines = (out / "ablation.tsv").read_text().splitlines()
    assert lines[0].startswith("variant\t")
    assert [line.split("\t")[0] for line in lines[1:]] == ["full", "no_text_init", "no_user_cl", "no_item_cl"]
    for variant in ("full", "no_text_init", "no_user_cl", "no_item_cl"):
        assert (out / variant / "metrics.json").exists()


def test_robustness_verb(dataset_dir, prepared_dir, tmp_path):
    out = tmp_path / "rob"
    code = run(
        ["robustness", "--data", str(prepared_dir), "--embeddings", str(dataset_dir / "reviews.remb"),
         "--out", str(out), "--fractions", "0,1", "--seeds", "1", *FAST]
    )
    assert code == 0
    lines = (out / "robustness.tsv").read_text().splitlines()
    assert lines[0].split("\t")[:2] == ["fraction", "seed"]
    assert len(lines) == 1 + 2 + 2


def test_pilot_verb(dataset_dir, prepared_dir, tmp_path):
    out = tmp_path / "pilot"
    code = run(
        ["pilot", "--data", str(prepared_dir), "--embeddings", str(dataset_dir / "reviews.remb"),
         "--out", str(out), "--seed", "3", "--sample-size", "6"]
    )
    assert code == 0
    lines = (out / "pilot.tsv").read_text().splitlines()
    assert len(lines) == 1 + 128


def test_module_entry_point(dataset_dir, tmp_path):
    # `python -m recafr` drives the same parser end to end
    result = subprocess.run(
        [sys.executable, "-m", "recafr", "prepare", "--in", str(dataset_dir / "interactions.tsv"),
         "--kcore", "1", "--seed", "1", "--out", str(tmp_path / "p")],
        capture_output=True,
        text=True,
    )
    assert result.returncode == 0, result.stderr
    assert (tmp_path / "p" / "train.tsv").exists()
    assert "[recafr]" in result.stderr


def test_thread_cap_env_validation(dataset_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("RECAFR_THREADS", "not-a-number")
    with pytest.raises(SystemExit):
        run(["prepare", "--in", str(dataset_dir / "interactions.tsv"), "--out", str(tmp_path / "p")])
    monkeypatch.setenv("RECAFR_THREADS", "2")
    assert run(
        ["prepare", "--in", str(dataset_dir / "interactions.tsv"), "--kcore", "1", "--seed", "1",
         "--out", str(tmp_path / "p2")]
    ) == 0
