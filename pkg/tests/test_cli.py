import json

import pytest

from vgcn_fuse.cli import RunConfig, main
from vgcn_fuse.synthetic import separable_corpus
from vgcn_fuse.tensor import dump_params, load_params
from vgcn_fuse.text import RawDocument, write_jsonl

SMALL = ["--layers", "1", "--heads", "2", "--dim", "8", "--hidden", "8", "--graph-embed", "2", "--max-len", "12",
         "--epochs", "2", "--lr", "1e-3"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    train_raw, val_raw = separable_corpus(seed=4, n_train=40, n_val=16, cue_per_class=4, n_filler=5, length=(3, 8))
    write_jsonl(root / "train.jsonl", train_raw)
    write_jsonl(root / "val.jsonl", val_raw)
    write_jsonl(root / "unlabeled.jsonl", [RawDocument(d.text) for d in val_raw])
    paths = {name: str(root / f"{name}.jsonl") for name in ("train", "val", "unlabeled")}
    paths.update(root=root, vocab=str(root / "vocab.json"), graph=str(root / "graph.json"), out=str(root / "run"))
    assert main(["build-graph", "--corpus", paths["train"], "--vocab", paths["vocab"], "--graph", paths["graph"],
                 "--max-len", "12"]) == 0
    assert main(["train", "--corpus", paths["train"], "--val", paths["val"], "--vocab", paths["vocab"],
                 "--graph", paths["graph"], "--out", paths["out"], *SMALL]) == 0
    return paths


def _artifacts(ws):
    return ["--vocab", ws["vocab"], "--graph", ws["graph"]]


def test_build_graph_summary(tmp_path, workspace, capsys):
    assert main(["build-graph", "--corpus", workspace["train"], "--vocab", str(tmp_path / "v.json"),
                 "--graph", str(tmp_path / "g.json"), "--npmi-threshold", "0.3", "--min-freq", "1"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert {"vocab_size", "edges", "density", "threshold"} <= set(summary)
    assert summary["threshold"] == 0.3


def test_threshold_one_gives_no_edges(tmp_path, workspace, capsys):
    assert main(["build-graph", "--corpus", workspace["train"], "--vocab", str(tmp_path / "v.json"),
                 "--graph", str(tmp_path / "g.json"), "--npmi-threshold", "1.0"]) == 0
    assert json.loads(capsys.readouterr().out)["edges"] == 0
    assert json.loads((tmp_path / "g.json").read_text())["edges"] == []


@pytest.mark.parametrize("mode", ["vgcn-bert", "bert-only", "vgcn-only", "vanilla-concat"])
def test_predict_single_example_every_mode(mode, workspace, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--corpus", workspace["train"], "--val", workspace["val"], *_artifacts(workspace),
                 "--out", str(out), "--mode", mode, *SMALL]) == 0
    one = tmp_path / "one.jsonl"
    write_jsonl(one, [RawDocument("c0w1 f2 f3")])
    pred = tmp_path / "pred.jsonl"
    assert main(["predict", "--checkpoint", str(out / "model.ckpt"), "--corpus", str(one), *_artifacts(workspace),
                 "--out", str(pred)]) == 0
    (row,) = [json.loads(line) for line in pred.read_text().splitlines()]
    assert abs(sum(row["probs"]) - 1.0) <= 1e-6
    assert row["label"] == max(range(2), key=lambda c: row["probs"][c])


def test_train_outputs(workspace):
    run = workspace["root"] / "run"
    metrics = json.loads((run / "metrics.json").read_text())
    for key in ("weighted_f1", "macro_f1", "per_class", "confusion", "epoch_log", "val", "best_epoch", "config", "meta"):
        assert key in metrics
    assert len(metrics["epoch_log"]) == 2
    assert metrics["config"]["dim"] == 8
    assert (run / "model.ckpt").stat().st_size > 0


def test_eval_reproduces_validation_metrics(workspace, capsys):
    ckpt = str(workspace["root"] / "run" / "model.ckpt")
    assert main(["eval", "--checkpoint", ckpt, "--corpus", workspace["val"], *_artifacts(workspace)]) == 0
    report = json.loads(capsys.readouterr().out)
    val = json.loads((workspace["root"] / "run" / "metrics.json").read_text())["val"]
    assert {k: report[k] for k in val} == val


def test_predict_and_explain(workspace, tmp_path):
    ckpt = str(workspace["root"] / "run" / "model.ckpt")
    out = tmp_path / "pred.jsonl"
    assert main(["predict", "--checkpoint", ckpt, "--corpus", workspace["unlabeled"], *_artifacts(workspace),
                 "--out", str(out)]) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 16
    assert all(set(r) == {"label", "probs"} and abs(sum(r["probs"]) - 1) < 1e-6 for r in rows)
    out = tmp_path / "explain.jsonl"
    assert main(["explain", "--checkpoint", ckpt, "--corpus", workspace["unlabeled"], *_artifacts(workspace),
                 "--out", str(out), "--top-k", "3"]) == 0
    reports = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["index"] for r in reports] == list(range(16))
    assert reports[0]["gold"] is None
    assert all(len(d["words"]) <= 3 for d in reports[0]["dimensions"])


def test_train_is_deterministic(workspace, tmp_path):
    out = str(tmp_path / "again")
    assert main(["train", "--corpus", workspace["train"], "--val", workspace["val"], *_artifacts(workspace),
                 "--out", out, *SMALL]) == 0
    first = json.loads((workspace["root"] / "run" / "metrics.json").read_text())
    second = json.loads((tmp_path / "again" / "metrics.json").read_text())
    for data in (first, second):
        data.pop("meta")
        data["config"].pop("out")
    assert first == second
    assert (tmp_path / "again" / "model.ckpt").read_bytes() == (workspace["root"] / "run" / "model.ckpt").read_bytes()


def test_config_file_and_flag_precedence(workspace, tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(f"corpus: {workspace['train']}\nvocab: {tmp_path / 'v.json'}\ngraph: {tmp_path / 'g.json'}\n"
                   "npmi_threshold: 0.5\n")
    assert main(["build-graph", "--config", str(cfg), "--npmi-threshold", "0.4"]) == 0
    captured = capsys.readouterr()
    assert json.loads(captured.out)["threshold"] == 0.4
    assert '"npmi_threshold": 0.4' in captured.err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"epochs": 3, "learning_rate": 0.1}))
    assert main(["train", "--config", str(cfg)]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_malformed_corpus_exit_2_names_line(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"text": "fine"}\n{"text": 3}\n')
    assert main(["build-graph", "--corpus", str(bad), "--vocab", str(tmp_path / "v"), "--graph", str(tmp_path / "g")]) == 2
    err = capsys.readouterr().err
    assert str(bad) in err and "line 2" in err


def test_missing_file_exit_2(tmp_path):
    assert main(["build-graph", "--corpus", str(tmp_path / "none.jsonl"), "--vocab", "v", "--graph", "g"]) == 2


def test_missing_required_option_exit_2():
    assert main(["train"]) == 2


def test_empty_vocabulary_exit_3(tmp_path):
    corpus = tmp_path / "c.jsonl"
    write_jsonl(corpus, [RawDocument("every word once")])
    assert main(["build-graph", "--corpus", str(corpus), "--vocab", str(tmp_path / "v"), "--graph", str(tmp_path / "g")]) == 3


def test_graph_and_vocab_mismatch_exit_4(workspace, tmp_path):
    ckpt = str(workspace["root"] / "run" / "model.ckpt")
    other_graph = tmp_path / "g.json"
    other_graph.write_text(open(workspace["graph"]).read().replace('"threshold":0.2', '"threshold":0.25'))
    assert main(["eval", "--checkpoint", ckpt, "--corpus", workspace["val"], "--vocab", workspace["vocab"],
                 "--graph", str(other_graph)]) == 4
    other_vocab = tmp_path / "v.json"
    other_vocab.write_text(open(workspace["vocab"]).read() + "\n")
    assert main(["eval", "--checkpoint", ckpt, "--corpus", workspace["val"], "--vocab", str(other_vocab),
                 "--graph", workspace["graph"]]) == 4


def test_checkpoint_version_exit_5(workspace, tmp_path):
    header, params = load_params((workspace["root"] / "run" / "model.ckpt").read_bytes())
    header = {k: v for k, v in header.items() if k != "params"}
    header["version"] = 99
    bad = tmp_path / "old.ckpt"
    bad.write_bytes(dump_params(params, header))
    assert main(["eval", "--checkpoint", str(bad), "--corpus", workspace["val"], *_artifacts(workspace)]) == 5


def test_thread_env(workspace, monkeypatch, tmp_path):
    monkeypatch.setenv("VGCN_FUSE_THREADS", "2")
    assert main(["build-graph", "--corpus", workspace["train"], "--vocab", str(tmp_path / "v.json"),
                 "--graph", str(tmp_path / "g.json"), "--max-len", "12"]) == 0
    assert (tmp_path / "g.json").read_bytes() == open(workspace["graph"], "rb").read()
    monkeypatch.setenv("VGCN_FUSE_THREADS", "many")
    assert main(["build-graph", "--corpus", workspace["train"], "--vocab", str(tmp_path / "v.json"),
                 "--graph", str(tmp_path / "g.json")]) == 2


def test_run_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        RunConfig.from_mapping({"nope": 1})
    assert RunConfig.from_mapping({"epochs": 4}).epochs == 4
