"""Vocabulary graph convolution: graph-embedding tokens and the classifier variant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch
from .graph import VocabGraph
from .tensor import Tensor

MODES = ("embedding", "classifier")


@dataclass(frozen=True)
class VgcnConfig:
    hidden: int = 128
    graph_embed: int = 16
    mode: str = "embedding"

    def __post_init__(self):
        if self.hidden < 1 or self.graph_embed < 1:
            raise ValueError("hidden and graph_embed must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


def init_uniform(rng: np.random.Generator, shape: tuple[int, int], dtype=np.float32) -> Tensor:
    """Symmetric uniform init with bound 1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(shape[0])
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_params(config: VgcnConfig, vocab_size: int, out_dim: int | None = None, rng=None, dtype=np.float32) -> dict[str, Tensor]:
    """Create ``vgcn.W_vh`` and either ``vgcn.W_hg`` or ``vgcn.W_hc``.

    ``out_dim`` is the class count in classifier mode and defaults to
    ``config.graph_embed`` otherwise.
    """
    rng = rng if rng is not None else np.random.default_rng()
    params = {"vgcn.W_vh": init_uniform(rng, (vocab_size, config.hidden), dtype)}
    if config.mode == "embedding":
        params["vgcn.W_hg"] = init_uniform(rng, (config.hidden, out_dim or config.graph_embed), dtype)
    else:
        if out_dim is None:
            raise ValueError("classifier mode needs the class count")
        params["vgcn.W_hc"] = init_uniform(rng, (config.hidden, out_dim), dtype)
    return params


def _adjacency_product(x: Tensor, graph: VocabGraph, dense: bool) -> Tensor:
    if x.shape[-1] != graph.size:
        raise ShapeMismatch(f"input has {x.shape[-1]} vocabulary columns, graph has {graph.size} nodes")
    if dense:
        return T.matmul(x, Tensor(graph.normalized.toarray().astype(x.dtype)))
    return T.sparse_matmul(x, graph.normalized)


def document_slab(word_vectors: Tensor, tf: np.ndarray) -> Tensor:
    """Build X (m, e, v): column j of slab d is word_vectors[j] * tf[d, j]."""
    v, _ = word_vectors.shape
    tf = np.asarray(tf)
    if tf.ndim != 2 or tf.shape[1] != v:
        raise ShapeMismatch(f"tf matrix {tf.shape} does not match {v} word vectors")
    columns = T.reshape(T.transpose(word_vectors), (1, word_vectors.shape[1], v))
    return T.mul(columns, Tensor(tf[:, None, :].astype(word_vectors.dtype)))


def vgcn_embed(x: Tensor, graph: VocabGraph, w_vh: Tensor, w_hg: Tensor, dense: bool = False) -> Tensor:
    """ReLU(X Ã W_vh) W_hg per embedding dimension, returned as (m, g, e).

    The e axis of X (m, e, v) is a batch axis: convolution only mixes the
    vocabulary axis. No bias terms, so all-zero X gives all-zero output.
    """
    if x.ndim != 3:
        raise ShapeMismatch(f"vgcn_embed expects (m, e, v) input, got {x.shape}")
    if w_vh.shape[0] != graph.size or w_hg.shape[0] != w_vh.shape[1]:
        raise ShapeMismatch(f"weights {w_vh.shape}, {w_hg.shape} do not chain over a {graph.size}-node graph")
    hidden = T.relu(T.matmul(_adjacency_product(x, graph, dense), w_vh))
    return T.transpose(T.matmul(hidden, w_hg), (0, 2, 1))


def vgcn_classify(tf: Tensor | np.ndarray, graph: VocabGraph, w_vh: Tensor, w_hc: Tensor, dense: bool = False) -> Tensor:
    """ReLU(X Ã W_vh) W_hc on bag-of-words rows X (m, v); returns (m, c) logits."""
    x = tf if isinstance(tf, Tensor) else Tensor(np.asarray(tf, dtype=w_vh.dtype))
    if x.ndim != 2:
        raise ShapeMismatch(f"vgcn_classify expects (m, v) input, got {x.shape}")
    if w_vh.shape[0] != graph.size or w_hc.shape[0] != w_vh.shape[1]:
        raise ShapeMismatch(f"weights {w_vh.shape}, {w_hc.shape} do not chain over a {graph.size}-node graph")
    return T.matmul(T.relu(T.matmul(_adjacency_product(x, graph, dense), w_vh)), w_hc)


def effective_weights(w_vh: np.ndarray, w_out: np.ndarray) -> np.ndarray:
    """Collapse the two weight layers into one (v, g) slab, ignoring the ReLU."""
    return np.asarray(w_vh, dtype=np.float64) @ np.asarray(w_out, dtype=np.float64)
