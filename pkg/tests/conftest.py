import numpy as np
import pytest

from vgcn_fuse.encoder import EncoderConfig
from vgcn_fuse.graph import build_graph, count_windows
from vgcn_fuse.model import Batch, Classifier, ModelConfig
from vgcn_fuse.synthetic import separable_corpus
from vgcn_fuse.text import build_vocab, encode_corpus
from vgcn_fuse.vgcn import VgcnConfig

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = getattr(report, "_criterion", None)
    if marker is not None:
        _criteria[marker[0]] = (marker[1], report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report._criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, outcome = _criteria[n]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2} {verdict}  {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_data():
    """Small separable corpus with its vocabulary, graph and batches."""
    train_raw, val_raw = separable_corpus(seed=3, n_train=48, n_val=16, cue_per_class=5, n_filler=6, length=(4, 7))
    vocab = build_vocab(train_raw + val_raw, min_freq=1)
    max_len = 8
    train_docs = encode_corpus(train_raw, vocab, max_len)
    val_docs = encode_corpus(val_raw, vocab, max_len)
    graph = build_graph(count_windows(train_docs + val_docs), len(vocab), 0.0)
    return {
        "vocab": vocab,
        "graph": graph,
        "max_len": max_len,
        "train": train_docs,
        "val": val_docs,
        "train_raw": train_raw,
        "val_raw": val_raw,
        "batch": Batch.from_docs(val_docs, len(vocab), 2),
    }


def tiny_config(mode, vocab_size, max_len=8, seed=0, vgcn_input="tf", dropout=0.0, classes=2):
    return ModelConfig(
        mode=mode,
        vocab_size=vocab_size,
        classes=classes,
        encoder=EncoderConfig(layers=1, heads=2, dim=8, dropout=dropout, max_len=max_len),
        vgcn=VgcnConfig(hidden=4, graph_embed=2),
        vgcn_input=vgcn_input,
        seed=seed,
    )


def tiny_model(mode, toy, dtype=np.float64, **kw):
    return Classifier(tiny_config(mode, len(toy["vocab"]), toy["max_len"], **kw), dtype=dtype)
