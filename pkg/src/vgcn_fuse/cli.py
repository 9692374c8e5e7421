"""Command-line front end: build-graph, train, eval, predict, explain.

Exit codes: 0 success, 2 malformed input or missing file, 3 empty vocabulary,
4 graph/vocabulary hash mismatch, 5 checkpoint version mismatch.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import datetime as dt
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from .checkpoint import load_model, save_model
from .encoder import EncoderConfig
from .errors import (
    CheckpointVersionError,
    ConfigMismatch,
    CorpusFormatError,
    EmptyClass,
    EmptyVocabulary,
    GraphMismatch,
)
from .explain import explain
from .graph import VocabGraph, build_graph, count_windows
from .io import atomic_write_text, file_sha256
from .model import MODES, Batch, Classifier, ModelConfig
from .text import Vocabulary, build_vocab, encode_corpus, read_jsonl
from .trainer import TrainConfig, evaluate, train
from .vgcn import VgcnConfig

log = logging.getLogger("vgcn_fuse")

EXIT_INPUT, EXIT_EMPTY_VOCAB, EXIT_GRAPH_MISMATCH, EXIT_VERSION = 2, 3, 4, 5
THREADS_ENV = "VGCN_FUSE_THREADS"


@dataclass
class RunConfig:
    """Everything a run needs; loaded from a config file, then overridden by flags."""

    corpus: str | None = None
    val: str | None = None
    test: str | None = None
    vocab: str | None = None
    graph: str | None = None
    checkpoint: str | None = None
    out: str | None = None
    mode: str = "vgcn-bert"
    npmi_threshold: float = 0.2
    min_freq: int = 2
    max_len: int = 200
    epochs: int = 9
    batch: int = 16
    lr: float = 1e-5
    weight_decay: float = 0.01
    loss: str = "weighted-cross-entropy"
    class_weighting: bool = True
    seed: int = 0
    classes: int | None = None
    layers: int = 2
    heads: int = 4
    dim: int = 64
    ffn_dim: int | None = None
    dropout: float = 0.2
    hidden: int = 128
    graph_embed: int = 16
    vgcn_input: str = "tf"
    top_k: int = 2

    @classmethod
    def from_mapping(cls, data: dict, source: str = "config") -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigMismatch(f"{source}: unknown keys {unknown}")
        return cls(**data)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def model_config(self, vocab_size: int, classes: int) -> ModelConfig:
        return ModelConfig(
            mode=self.mode,
            vocab_size=vocab_size,
            classes=classes,
            encoder=EncoderConfig(layers=self.layers, heads=self.heads, dim=self.dim, ffn_dim=self.ffn_dim,
                                  dropout=self.dropout, max_len=self.max_len),
            vgcn=VgcnConfig(hidden=self.hidden, graph_embed=self.graph_embed),
            vgcn_input=self.vgcn_input,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch, lr=self.lr, weight_decay=self.weight_decay,
                           loss=self.loss, class_weighting=self.class_weighting, seed=self.seed)


# flag name -> RunConfig field; every flag defaults to None so config-file values survive
_FLAGS = {
    "--corpus": ("corpus", str), "--val": ("val", str), "--test": ("test", str),
    "--vocab": ("vocab", str), "--graph": ("graph", str), "--checkpoint": ("checkpoint", str),
    "--out": ("out", str), "--mode": ("mode", str),
    "--npmi-threshold": ("npmi_threshold", float), "--min-freq": ("min_freq", int),
    "--max-len": ("max_len", int), "--epochs": ("epochs", int), "--batch": ("batch", int),
    "--lr": ("lr", float), "--weight-decay": ("weight_decay", float), "--loss": ("loss", str),
    "--seed": ("seed", int), "--classes": ("classes", int), "--layers": ("layers", int),
    "--heads": ("heads", int), "--dim": ("dim", int), "--dropout": ("dropout", float),
    "--hidden": ("hidden", int), "--graph-embed": ("graph_embed", int),
    "--vgcn-input": ("vgcn_input", str), "--top-k": ("top_k", int),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vgcn-fuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("build-graph", "build the vocabulary and NPMI graph from a corpus"),
        ("train", "train a model and write checkpoint + metrics"),
        ("eval", "evaluate a checkpoint on a labeled corpus"),
        ("predict", "predict labels and probabilities for a corpus"),
        ("explain", "write [CLS] attention reports for a corpus"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="YAML or JSON file with RunConfig keys")
        for flag, (dest, typ) in _FLAGS.items():
            kwargs = {"dest": dest, "type": typ, "default": None}
            if flag == "--mode":
                kwargs["choices"] = MODES
            cmd.add_argument(flag, **kwargs)
        cmd.add_argument("--no-class-weighting", dest="class_weighting", action="store_false", default=None)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        loaded = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ConfigMismatch(f"{args.config}: expected a mapping at top level")
        data.update(loaded)
    cfg = RunConfig.from_mapping(data, source=args.config or "config")
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name, None) is not None}
    return dataclasses.replace(cfg, **overrides)


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise ConfigMismatch("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigMismatch(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _meta() -> dict:
    return {"created": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")}


def _emit(path: str | None, text: str) -> None:
    if path:
        atomic_write_text(path, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_build_graph(cfg: RunConfig) -> int:
    _require(cfg, "corpus", "vocab", "graph")
    docs = read_jsonl(cfg.corpus, labeled=False)
    vocab = build_vocab(docs, cfg.min_freq)
    encoded = encode_corpus(docs, vocab, cfg.max_len)
    graph = build_graph(count_windows(encoded, workers=_threads()), len(vocab), cfg.npmi_threshold)
    vocab.save(cfg.vocab)
    graph.save(cfg.graph)
    summary = {
        "vocab_size": len(vocab),
        "edges": graph.n_edges,
        "density": graph.density,
        "threshold": graph.threshold,
        "graph_hash": file_sha256(cfg.graph),
        "config": cfg.to_json(),
    }
    sys.stdout.write(_dump(summary))
    return 0


def _load_artifacts(cfg: RunConfig) -> tuple[Vocabulary, VocabGraph | None]:
    _require(cfg, "vocab")
    vocab = Vocabulary.load(cfg.vocab)
    graph = VocabGraph.load(cfg.graph) if cfg.graph else None
    if graph is not None and graph.size != len(vocab):
        raise ConfigMismatch(f"graph has {graph.size} nodes but vocabulary has {len(vocab)} tokens")
    return vocab, graph


def _infer_classes(docs) -> int:
    n = 0
    for d in docs:
        n = max(n, len(d.soft_labels) if d.soft_labels is not None else d.label + 1)
    return max(n, 2)


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "corpus", "val", "vocab", "out")
    if cfg.mode != "bert-only":
        _require(cfg, "graph")
    vocab, graph = _load_artifacts(cfg)
    train_raw, val_raw = read_jsonl(cfg.corpus), read_jsonl(cfg.val)
    test_raw = read_jsonl(cfg.test) if cfg.test else None
    classes = cfg.classes or _infer_classes(train_raw + val_raw + (test_raw or []))
    model = Classifier(cfg.model_config(len(vocab), classes))
    tcfg = cfg.train_config()
    enc = lambda docs: Batch.from_docs(encode_corpus(docs, vocab, cfg.max_len), len(vocab), classes)  # noqa: E731
    result = train(model, enc(train_raw), enc(val_raw), graph, tcfg,
                   test_docs=enc(test_raw) if test_raw is not None else None)
    out = Path(cfg.out)
    graph_hash = file_sha256(cfg.graph) if cfg.graph else None
    weights = None if result.class_weights is None else [float(w) for w in result.class_weights]
    save_model(out / "model.ckpt", model, graph_hash, file_sha256(cfg.vocab),
               extra={"train_config": tcfg.to_json(), "class_weights": weights})
    headline = result.test_report or result.val_report
    metrics = {
        **headline.to_json(),
        "split": "test" if result.test_report else "val",
        "best_epoch": result.best_epoch,
        "val": result.val_report.to_json(),
        "test": result.test_report.to_json() if result.test_report else None,
        "epoch_log": result.epoch_log,
        "config": cfg.to_json(),
        "meta": _meta(),
    }
    atomic_write_text(out / "metrics.json", _dump(metrics))
    sys.stdout.write(_dump({"checkpoint": str(out / "model.ckpt"), "best_epoch": result.best_epoch,
                            "weighted_f1": headline.weighted_f1, "macro_f1": headline.macro_f1,
                            "config": cfg.to_json()}))
    return 0


def _load_for_inference(cfg: RunConfig):
    _require(cfg, "checkpoint", "corpus", "vocab")
    model, header = load_model(cfg.checkpoint, cfg.graph, cfg.vocab)
    if header.get("graph_hash") is not None and cfg.graph is None:
        raise ConfigMismatch("this checkpoint was trained with a graph; pass --graph")
    vocab, graph = _load_artifacts(cfg)
    if len(vocab) != model.config.vocab_size:
        raise ConfigMismatch("vocabulary size differs from the checkpoint")
    tcfg = TrainConfig(**header["train_config"]) if "train_config" in header else TrainConfig()
    weights = header.get("class_weights")
    tcfg_weights = None if weights is None else np.asarray(weights, dtype=np.float64)
    sys.stderr.write("checkpoint model config: " + json.dumps(model.config.to_json(), sort_keys=True) + "\n")
    return model, vocab, graph, tcfg, tcfg_weights


def cmd_eval(cfg: RunConfig) -> int:
    model, vocab, graph, tcfg, weights = _load_for_inference(cfg)
    docs = read_jsonl(cfg.corpus)
    batch = Batch.from_docs(encode_corpus(docs, vocab, model.config.encoder.max_len), len(vocab), model.config.classes)
    report, _ = evaluate(model, batch, graph, tcfg, weights)
    _emit(cfg.out, _dump({**report.to_json(), "config": cfg.to_json(), "meta": _meta()}))
    return 0


def _batches(model, vocab, docs, size):
    encoded = encode_corpus(docs, vocab, model.config.encoder.max_len)
    for start in range(0, len(encoded), size):
        yield start, Batch.from_docs(encoded[start : start + size], len(vocab), model.config.classes)


def cmd_predict(cfg: RunConfig) -> int:
    model, vocab, graph, tcfg, _ = _load_for_inference(cfg)
    docs = read_jsonl(cfg.corpus, labeled=False)
    lines = []
    for _, batch in _batches(model, vocab, docs, tcfg.batch_size):
        for row in model.predict_proba(batch, graph).astype(float):
            lines.append(json.dumps({"label": int(row.argmax()), "probs": [float(p) for p in row]}))
    _emit(cfg.out, "".join(line + "\n" for line in lines))
    return 0


def cmd_explain(cfg: RunConfig) -> int:
    model, vocab, graph, tcfg, _ = _load_for_inference(cfg)
    docs = read_jsonl(cfg.corpus, labeled=False)
    lines = []
    for start, batch in _batches(model, vocab, docs, tcfg.batch_size):
        for report in explain(model, batch, graph, vocab.tokens, cfg.top_k, start_index=start):
            lines.append(report.dumps())
    _emit(cfg.out, "".join(line + "\n" for line in lines))
    return 0


COMMANDS = {
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "explain": cmd_explain,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        sys.stderr.write("resolved config: " + json.dumps(cfg.to_json(), sort_keys=True) + "\n")
        limiter = contextlib.nullcontext()
        if os.environ.get(THREADS_ENV):
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(limits=_threads())
        with limiter:
            return COMMANDS[args.command](cfg)
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: file not found: {exc.filename}\n")
        return EXIT_INPUT
    except CorpusFormatError as exc:
        sys.stderr.write(f"error: malformed input at {exc.path} line {exc.line}: {exc.reason}\n")
        return EXIT_INPUT
    except EmptyVocabulary as exc:
        sys.stderr.write(f"error: empty vocabulary: {exc}\n")
        return EXIT_EMPTY_VOCAB
    except GraphMismatch as exc:
        sys.stderr.write(f"error: artifact hash mismatch: {exc}\n")
        return EXIT_GRAPH_MISMATCH
    except CheckpointVersionError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VERSION
    except (ConfigMismatch, EmptyClass, ValueError, TypeError, json.JSONDecodeError, yaml.YAMLError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
