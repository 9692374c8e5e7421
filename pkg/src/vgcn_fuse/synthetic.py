"""Generated corpora with class-correlated word clusters.

Words are plain lowercase strings so they survive cleaning and tokenization
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .text import RawDocument


def _words(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{k}" for k in range(n)]


def _doc(rng: np.random.Generator, cues: list[str], filler: list[str], n_cue: int, length: tuple[int, int]) -> str:
    n = int(rng.integers(length[0], length[1] + 1))
    tokens = list(rng.choice(cues, size=n_cue, replace=True)) + list(rng.choice(filler, size=max(n - n_cue, 0)))
    rng.shuffle(tokens)
    return " ".join(tokens)


def separable_corpus(seed: int = 0, n_train: int = 400, n_val: int = 100, n_classes: int = 2,
                     cue_per_class: int = 20, n_filler: int = 20, n_cue: int = 3,
                     length: tuple[int, int] = (8, 14)) -> tuple[list[RawDocument], list[RawDocument]]:
    """Each class owns a cluster of cue words; every document draws from its class cluster plus shared filler."""
    rng = np.random.Generator(np.random.Philox(seed))
    clusters = [_words(f"c{c}w", cue_per_class) for c in range(n_classes)]
    filler = _words("f", n_filler)

    def make(n):
        labels = rng.integers(0, n_classes, size=n)
        return [RawDocument(_doc(rng, clusters[y], filler, n_cue, length), int(y)) for y in labels]

    return make(n_train), make(n_val)


@dataclass
class TransferTask:
    """Labeled documents use cue set A, test documents the disjoint set B.

    A and B words of the same class only meet inside ``graph_corpus``, which
    is unlabeled.
    """

    graph_corpus: list[RawDocument]
    train: list[RawDocument]
    val: list[RawDocument]
    test: list[RawDocument]


def transfer_task(seed: int = 0, n_classes: int = 2, cue_per_set: int = 6, n_filler: int = 20,
                  n_graph: int = 600, n_train: int = 200, n_val: int = 60, n_test: int = 200,
                  length: tuple[int, int] = (6, 10), n_cue: int = 2) -> TransferTask:
    rng = np.random.Generator(np.random.Philox(seed))
    set_a = [_words(f"a{c}w", cue_per_set) for c in range(n_classes)]
    set_b = [_words(f"b{c}w", cue_per_set) for c in range(n_classes)]
    filler = _words("f", n_filler)

    def labeled(n, cue_sets):
        labels = rng.integers(0, n_classes, size=n)
        return [RawDocument(_doc(rng, cue_sets[y], filler, n_cue, length), int(y)) for y in labels]

    graph_docs = []
    for _ in range(n_graph):
        c = int(rng.integers(0, n_classes))
        n = int(rng.integers(length[0], length[1] + 1))
        tokens = list(rng.choice(set_a[c], size=n_cue)) + list(rng.choice(set_b[c], size=n_cue))
        tokens += list(rng.choice(filler, size=max(n - 2 * n_cue, 0)))
        rng.shuffle(tokens)
        graph_docs.append(RawDocument(" ".join(tokens)))
    train = labeled(n_train, set_a)
    val = labeled(n_val, set_a)
    test = labeled(n_test, set_b)
    return TransferTask(graph_docs, train, val, test)
