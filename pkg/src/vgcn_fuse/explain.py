"""[CLS] attention extraction and word labels for graph-embedding dimensions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .encoder import KIND_CLS, KIND_GRAPH, KIND_NAMES, KIND_PAD, KIND_WORD
from .errors import MissingAttention
from .graph import VocabGraph
from .model import Batch, Classifier, ModelOutput
from .vgcn import effective_weights

REPORT_VERSION = 1
DEFAULT_TOP_K = 2


def attribution_matrix(doc_tf: Mapping[int, float], graph: VocabGraph, weights: np.ndarray) -> np.ndarray:
    """Full (v, g) score matrix Z = (x Ã)ᵀ ⊙ W for one document."""
    x = np.zeros(graph.size)
    for i, n in doc_tf.items():
        x[i] = n
    footprint = graph.normalized.T @ x
    return footprint[:, None] * np.asarray(weights, dtype=np.float64)


def dimension_words(doc_tf: Mapping[int, float], graph: VocabGraph, weights: np.ndarray,
                    k: int = DEFAULT_TOP_K) -> list[list[tuple[int, float]]]:
    """Rank words per graph-embedding dimension by Z = (x Ã)ᵀ ⊙ W.

    Only words in the support of x Ã (the document's words and their graph
    neighbours) are eligible. Ties go to the smaller word id. Returns, for each
    column of ``weights``, up to ``k`` (word_id, score) pairs.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    weights = np.asarray(weights, dtype=np.float64)
    n_dims = weights.shape[1]
    if not doc_tf:
        return [[] for _ in range(n_dims)]
    x = np.zeros(graph.size)
    for i, n in doc_tf.items():
        x[i] = n
    footprint = graph.normalized.T @ x  # x Ã as a column
    support = np.flatnonzero(footprint)
    if support.size == 0:
        return [[] for _ in range(n_dims)]
    z = footprint[support, None] * weights[support]
    ranked = []
    for g in range(n_dims):
        order = np.lexsort((support, -z[:, g]))[:k]
        ranked.append([(int(support[i]), float(z[i, g])) for i in order])
    return ranked


def cls_attention(output: ModelOutput) -> list[list[list[dict]]]:
    """Row 0 of every attention map, split into graph and word positions.

    Returns ``[example][layer][head]`` dicts with keys ``cls``, ``graph``,
    ``word`` and ``graph_mass``. Pads are dropped. Without graph tokens the
    graph list is empty and its mass is 0.
    """
    if output.attentions is None or output.stream is None:
        raise MissingAttention("this forward pass kept no attention maps (mode without an encoder?)")
    kinds = output.stream.kinds
    reports = []
    for b in range(kinds.shape[0]):
        graph_pos = np.flatnonzero(kinds[b] == KIND_GRAPH)
        word_pos = np.flatnonzero(kinds[b] == KIND_WORD)
        layers = []
        for amap in output.attentions:
            heads = []
            for h in range(amap.shape[1]):
                row = amap[b, h, 0].astype(np.float64)
                graph_w = [float(w) for w in row[graph_pos]]
                heads.append({
                    "cls": float(row[0]),
                    "graph": graph_w,
                    "word": [float(w) for w in row[word_pos]],
                    "graph_mass": float(sum(graph_w)),
                })
            layers.append(heads)
        reports.append(layers)
    return reports


@dataclass
class AttentionReport:
    index: int
    tokens: list[dict]
    attention: list[list[dict]] | None
    dimensions: list[dict]
    predicted: int
    gold: int | None
    probs: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "index": self.index,
            "tokens": self.tokens,
            "attention": self.attention,
            "dimensions": self.dimensions,
            "predicted": self.predicted,
            "gold": self.gold,
            "probs": self.probs,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False)

    @classmethod
    def from_json(cls, obj: dict) -> "AttentionReport":
        if obj.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {obj.get('version')!r}")
        return cls(obj["index"], obj["tokens"], obj["attention"], obj["dimensions"],
                   obj["predicted"], obj["gold"], obj.get("probs", []))


def _graph_weight_slab(model: Classifier) -> np.ndarray | None:
    p = model.params
    if "vgcn.W_hg" in p:
        return effective_weights(p["vgcn.W_vh"].data, p["vgcn.W_hg"].data)
    if "vgcn.W_hc" in p:
        return effective_weights(p["vgcn.W_vh"].data, p["vgcn.W_hc"].data)
    return None


def explain(model: Classifier, batch: Batch, graph: VocabGraph | None, tokens: Sequence[str],
            k: int = DEFAULT_TOP_K, start_index: int = 0) -> list[AttentionReport]:
    """Build one AttentionReport per example in ``batch`` (eval mode)."""
    out = model.forward(batch, graph, train=False)
    probs = np.exp(out.logits.data - out.logits.data.max(axis=1, keepdims=True))
    probs = probs / probs.sum(axis=1, keepdims=True)
    attention = cls_attention(out) if out.attentions is not None else None
    slab = _graph_weight_slab(model)
    reports = []
    for b in range(len(batch)):
        if out.stream is not None:
            kinds = out.stream.kinds[b]
            ids = iter(batch.token_ids[b])
            stream_tokens = []
            n_graph = 0
            for kind in kinds:
                if kind == KIND_GRAPH:
                    stream_tokens.append({"token": f"[G{n_graph}]", "kind": "graph"})
                    n_graph += 1
                    continue
                tok_id = int(next(ids))
                if kind != KIND_PAD:
                    stream_tokens.append({"token": tokens[tok_id], "kind": KIND_NAMES[kind]})
        else:
            stream_tokens = [{"token": tokens[int(i)], "kind": KIND_NAMES[KIND_CLS if j == 0 else KIND_WORD]}
                             for j, (i, mk) in enumerate(zip(batch.token_ids[b], batch.mask[b])) if mk]
        dims = []
        if slab is not None and graph is not None:
            tf = {int(i): float(batch.tf[b, i]) for i in np.flatnonzero(batch.tf[b])}
            for g, ranked in enumerate(dimension_words(tf, graph, slab, k)):
                dims.append({"dim": g, "words": [{"id": i, "token": tokens[i], "score": s} for i, s in ranked]})
        gold = int(batch.labels[b])
        reports.append(AttentionReport(
            index=start_index + b,
            tokens=stream_tokens,
            attention=attention[b] if attention is not None else None,
            dimensions=dims,
            predicted=int(out.logits.data[b].argmax()),
            gold=gold if gold >= 0 else None,
            probs=[float(p) for p in probs[b]],
        ))
    return reports
