"""Post-LN multi-head self-attention encoder over word and graph-embedding tokens."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch
from .tensor import Tensor

KIND_CLS, KIND_GRAPH, KIND_WORD, KIND_PAD = 0, 1, 2, 3
KIND_NAMES = ("cls", "graph", "word", "pad")
EMBED_STD = 1.0  # N(0, 1), the common embedding-table default


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    dim: int = 64
    ffn_dim: int | None = None
    dropout: float = 0.2
    max_len: int = 200

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.heads < 1 or self.dim % self.heads:
            raise ValueError(f"dim {self.dim} must be divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.dim)


@dataclass
class TokenStream:
    """Embedded sequence [CLS], graph tokens, word tokens, pads."""

    x: Tensor  # (m, T, e)
    mask: np.ndarray  # (m, T), 1 where attention may look
    kinds: np.ndarray  # (m, T), KIND_* codes
    n_graph: int


@dataclass
class EncoderOutput:
    hidden: Tensor  # (m, T, e)
    attentions: list[np.ndarray]  # per layer, (m, H, T, T)


def _linear_init(rng, fan_in, fan_out, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return (
        Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype), requires_grad=True),
        Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True),
    )


def _ln_init(dim, dtype):
    return (
        Tensor(np.ones(dim, dtype=dtype), requires_grad=True),
        Tensor(np.zeros(dim, dtype=dtype), requires_grad=True),
    )


def init_params(config: EncoderConfig, vocab_size: int, rng: np.random.Generator, dtype=np.float32,
                graph_position: bool = False) -> dict[str, Tensor]:
    e = config.dim

    def normal(*shape):
        return Tensor((rng.standard_normal(shape) * EMBED_STD).astype(dtype), requires_grad=True)

    params = {
        "emb.word": normal(vocab_size, e),
        "emb.pos": normal(config.max_len, e),
        "emb.kind": normal(len(KIND_NAMES), e),
    }
    if graph_position:
        params["emb.graphpos"] = normal(1, e)
    params["emb.ln.gamma"], params["emb.ln.beta"] = _ln_init(e, dtype)
    for i in range(config.layers):
        p = f"enc.layer{i}"
        for proj in ("q", "k", "v", "o"):
            params[f"{p}.attn.w{proj}"], params[f"{p}.attn.b{proj}"] = _linear_init(rng, e, e, dtype)
        params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"] = _ln_init(e, dtype)
        params[f"{p}.ffn.w1"], params[f"{p}.ffn.b1"] = _linear_init(rng, e, config.ffn_dim, dtype)
        params[f"{p}.ffn.w2"], params[f"{p}.ffn.b2"] = _linear_init(rng, config.ffn_dim, e, dtype)
        params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"] = _ln_init(e, dtype)
    return params


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Softmax(Q Kᵀ / sqrt(d_k)) V. Returns (output, weights).

    ``mask`` broadcasts against the (..., T_q, T_k) score array; zeros mark
    keys that get a score of -inf.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = T.mul(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        try:
            mask = np.broadcast_to(mask, scores.shape)
        except ValueError:
            raise ShapeMismatch(f"attention mask {np.shape(mask)} vs scores {scores.shape}") from None
    weights = T.softmax(scores, axis=-1, mask=mask)
    return T.matmul(weights, v), weights


def _norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    return T.add(T.mul(T.layer_norm(x), gamma), beta)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, w), b)


def assemble(token_ids: np.ndarray, mask: np.ndarray, params: dict[str, Tensor], config: EncoderConfig,
             graph_tokens: Tensor | None = None, train: bool = False,
             rng: np.random.Generator | None = None) -> TokenStream:
    """Embed words (+ positions + kinds) and splice graph tokens in after [CLS].

    Word tokens take positional embeddings by their index in ``token_ids``, so
    word positions are the same with or without graph tokens. Graph tokens
    share one learned position vector. A graph token that is identically zero
    is masked out like padding.
    """
    token_ids = np.asarray(token_ids)
    mask = np.asarray(mask)
    m, n = token_ids.shape
    if n > config.max_len:
        raise ShapeMismatch(f"sequence length {n} exceeds max_len {config.max_len}")
    kinds = np.where(mask.astype(bool), KIND_WORD, KIND_PAD)
    kinds[:, 0] = KIND_CLS
    words = T.embedding_lookup(params["emb.word"], token_ids)
    pos = T.take(params["emb.pos"], slice(0, n))
    x = T.add(T.add(words, pos), T.embedding_lookup(params["emb.kind"], kinds))
    full_mask = mask.astype(np.int8)
    n_graph = 0
    if graph_tokens is not None:
        if graph_tokens.ndim != 3 or graph_tokens.shape[0] != m or graph_tokens.shape[2] != config.dim:
            raise ShapeMismatch(f"graph tokens {graph_tokens.shape} for batch {m} and dim {config.dim}")
        n_graph = graph_tokens.shape[1]
        graph_kind = T.take(params["emb.kind"], slice(KIND_GRAPH, KIND_GRAPH + 1))
        g = T.add(T.add(graph_tokens, params["emb.graphpos"]), graph_kind)
        x = T.concat([T.take(x, (slice(None), slice(0, 1))), g, T.take(x, (slice(None), slice(1, None)))], axis=1)
        present = np.any(graph_tokens.data != 0, axis=-1).astype(np.int8)
        full_mask = np.concatenate([full_mask[:, :1], present, full_mask[:, 1:]], axis=1)
        kinds = np.concatenate([kinds[:, :1], np.full((m, n_graph), KIND_GRAPH), kinds[:, 1:]], axis=1)
    x = _norm(x, params["emb.ln.gamma"], params["emb.ln.beta"])
    x = T.dropout(x, config.dropout, train, rng)
    return TokenStream(x=x, mask=full_mask, kinds=kinds.astype(np.int8), n_graph=n_graph)


def encode(stream: TokenStream, params: dict[str, Tensor], config: EncoderConfig, train: bool = False,
           rng: np.random.Generator | None = None) -> EncoderOutput:
    x = stream.x
    m, t, e = x.shape
    h, d = config.heads, e // config.heads
    key_mask = stream.mask[:, None, None, :]
    maps = []

    def split(y):
        return T.transpose(T.reshape(y, (m, t, h, d)), (0, 2, 1, 3))

    for i in range(config.layers):
        p = f"enc.layer{i}"
        q = split(_linear(x, params[f"{p}.attn.wq"], params[f"{p}.attn.bq"]))
        k = split(_linear(x, params[f"{p}.attn.wk"], params[f"{p}.attn.bk"]))
        v = split(_linear(x, params[f"{p}.attn.wv"], params[f"{p}.attn.bv"]))
        ctx, weights = attention(q, k, v, key_mask)
        maps.append(weights.data)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (m, t, e))
        ctx = _linear(ctx, params[f"{p}.attn.wo"], params[f"{p}.attn.bo"])
        x = _norm(T.add(x, T.dropout(ctx, config.dropout, train, rng)), params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"])
        ff = _linear(T.gelu(_linear(x, params[f"{p}.ffn.w1"], params[f"{p}.ffn.b1"])), params[f"{p}.ffn.w2"], params[f"{p}.ffn.b2"])
        x = _norm(T.add(x, T.dropout(ff, config.dropout, train, rng)), params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"])
    return EncoderOutput(hidden=x, attentions=maps)
