"""Sentence-window NPMI vocabulary graph and its normalized adjacency."""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import UndefinedPair
from .text import EncodedDocument

GRAPH_FORMAT_VERSION = 1
DEFAULT_THRESHOLD = 0.2


@dataclass(frozen=True)
class CooccurrenceCounts:
    """Window statistics: one window per document, presence not multiplicity."""

    n_windows: int
    word_windows: Mapping[int, int]
    pair_windows: Mapping[tuple[int, int], int]  # keys (i, j) with i < j

    def merge(self, other: "CooccurrenceCounts") -> "CooccurrenceCounts":
        words = Counter(self.word_windows)
        words.update(other.word_windows)
        pairs = Counter(self.pair_windows)
        pairs.update(other.pair_windows)
        return CooccurrenceCounts(self.n_windows + other.n_windows, dict(words), dict(pairs))

    def word(self, i: int) -> int:
        return self.word_windows.get(i, 0)

    def pair(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        return self.pair_windows.get((i, j), 0)


def _count_chunk(windows: Sequence[Iterable[int]]) -> CooccurrenceCounts:
    words: Counter = Counter()
    pairs: Counter = Counter()
    for window in windows:
        present = sorted(set(window))
        words.update(present)
        pairs.update(combinations(present, 2))
    return CooccurrenceCounts(len(windows), dict(words), dict(pairs))


def count_windows(corpus: Sequence[EncodedDocument], workers: int = 1) -> CooccurrenceCounts:
    """Count word and pair presence, treating each document as one window."""
    windows = [list(doc.vocab_tf) for doc in corpus]
    if workers <= 1 or len(windows) < 2 * workers:
        return _count_chunk(windows)
    step = math.ceil(len(windows) / workers)
    chunks = [windows[k : k + step] for k in range(0, len(windows), step)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_count_chunk, chunks))
    total = parts[0]
    for part in parts[1:]:
        total = total.merge(part)
    return total


def npmi_from_counts(n: int, n_i: int, n_j: int, n_ij: int) -> float:
    """NPMI = -log(p_ij / (p_i p_j)) / log(p_ij), from integer window counts.

    Both logarithms go through log1p of an exactly-computed integer difference,
    so values stay accurate when the ratios are close to one.
    """
    if n_ij <= 0:
        raise UndefinedPair("pair never co-occurs")
    if n_ij == n:
        return 1.0
    denom = n_i * n_j
    pmi = math.log1p((n_ij * n - denom) / denom)
    log_pij = math.log1p((n_ij - n) / n)
    return min(1.0, max(-1.0, -pmi / log_pij))


def npmi(counts: CooccurrenceCounts, i: int, j: int) -> float:
    if i == j:
        raise ValueError("NPMI is only defined for distinct words")
    return npmi_from_counts(counts.n_windows, counts.word(i), counts.word(j), counts.pair(i, j))


@dataclass(frozen=True, eq=False)
class VocabGraph:
    """Symmetric NPMI adjacency with unit diagonal, plus D^-1/2 A D^-1/2.

    Off-diagonal weights are kept as an (i, j, w) list with i < j; both sparse
    matrices are derived from it by a single deterministic routine, so a graph
    loaded from disk reproduces the normalized matrix bit for bit.
    """

    size: int
    threshold: float
    edge_list: tuple[tuple[int, int, float], ...]
    adjacency: sp.csr_matrix = field(repr=False)
    normalized: sp.csr_matrix = field(repr=False)

    @classmethod
    def from_edges(cls, size: int, threshold: float, edges: Iterable[tuple[int, int, float]]) -> "VocabGraph":
        edge_list = tuple(sorted((int(i), int(j), float(w)) for i, j, w in edges))
        for i, j, _ in edge_list:
            if not 0 <= i < j < size:
                raise ValueError(f"edge ({i}, {j}) out of range or not i < j for size {size}")
        adjacency, normalized = _assemble(size, edge_list)
        return cls(size, float(threshold), edge_list, adjacency, normalized)

    @property
    def n_edges(self) -> int:
        return len(self.edge_list)

    @property
    def density(self) -> float:
        possible = self.size * (self.size - 1) // 2
        return self.n_edges / possible if possible else 0.0

    def neighbors(self, i: int) -> np.ndarray:
        row = self.adjacency.getrow(i)
        return row.indices[row.indices != i]

    def to_json(self) -> dict:
        return {
            "version": GRAPH_FORMAT_VERSION,
            "threshold": self.threshold,
            "size": self.size,
            "edges": [[i, j, w] for i, j, w in self.edge_list],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VocabGraph":
        if obj.get("version") != GRAPH_FORMAT_VERSION:
            raise ValueError(f"unsupported graph version {obj.get('version')!r}")
        return cls.from_edges(int(obj["size"]), float(obj["threshold"]), (tuple(e) for e in obj["edges"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        from .io import atomic_write_text

        atomic_write_text(path, self.dumps())

    @classmethod
    def load(cls, path) -> "VocabGraph":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _assemble(size: int, edge_list) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    rows = [i for i, j, _ in edge_list] + [j for i, j, _ in edge_list] + list(range(size))
    cols = [j for i, j, _ in edge_list] + [i for i, j, _ in edge_list] + list(range(size))
    vals = [w for *_, w in edge_list] * 2 + [1.0] * size
    adj = sp.csr_matrix(
        (np.asarray(vals, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(size, size),
    )
    adj.sort_indices()
    degree = np.add.reduceat(adj.data, adj.indptr[:-1]) if size else np.zeros(0)
    inv_sqrt = 1.0 / np.sqrt(degree)
    row_of = np.repeat(np.arange(size), np.diff(adj.indptr))
    # inv_sqrt[i] * inv_sqrt[j] commutes, so the result is bit-symmetric
    norm_data = adj.data * (inv_sqrt[row_of] * inv_sqrt[adj.indices])
    normalized = sp.csr_matrix((norm_data, adj.indices.copy(), adj.indptr.copy()), shape=(size, size))
    return adj, normalized


def build_graph(counts: CooccurrenceCounts, size: int, threshold: float = DEFAULT_THRESHOLD) -> VocabGraph:
    """Keep an edge (i, j) iff NPMI(i, j) > threshold; every node gets a self-loop."""
    if threshold < -1.0:
        raise ValueError("threshold must be >= -1")
    edges = []
    for (i, j), n_ij in counts.pair_windows.items():
        value = npmi_from_counts(counts.n_windows, counts.word(i), counts.word(j), n_ij)
        if value > threshold:
            edges.append((i, j, value))
    return VocabGraph.from_edges(size, threshold, edges)


def subgraph_slice(graph: VocabGraph, vocab_tf: Mapping[int, float]) -> dict[int, float]:
    """Row vector x times the normalized adjacency, returned sparsely."""
    if not vocab_tf:
        return {}
    ids = np.fromiter(vocab_tf.keys(), dtype=np.int64)
    vals = np.fromiter(vocab_tf.values(), dtype=np.float64)
    x = sp.csr_matrix((vals, (np.zeros_like(ids), ids)), shape=(1, graph.size))
    out = (x @ graph.normalized).tocoo()
    return {int(j): float(v) for j, v in sorted(zip(out.col, out.data)) if v != 0.0}


def tf_matrix(docs: Sequence[EncodedDocument], size: int, dtype=np.float64) -> np.ndarray:
    out = np.zeros((len(docs), size), dtype=dtype)
    for row, doc in enumerate(docs):
        for i, n in doc.vocab_tf.items():
            out[row, i] = n
    return out
