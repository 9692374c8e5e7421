"""The four classifier variants behind one forward interface.

* ``vgcn-bert``: graph-embedding tokens are spliced into the encoder input.
* ``bert-only``: the encoder alone.
* ``vgcn-only``: the vocabulary GCN alone (bag-of-words or embedding input).
* ``vanilla-concat``: encoder [CLS] state concatenated with mean-pooled graph
  embedding, with no interaction inside the encoder.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig, TokenStream, assemble, encode
from . import encoder as enc
from . import vgcn
from .errors import ConfigMismatch
from .graph import VocabGraph, tf_matrix
from .tensor import Tensor
from .text import EncodedDocument
from .vgcn import VgcnConfig

MODES = ("vgcn-bert", "bert-only", "vgcn-only", "vanilla-concat")
VGCN_INPUTS = ("tf", "embedding")


@dataclass(frozen=True)
class ModelConfig:
    mode: str
    vocab_size: int
    classes: int
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    vgcn: VgcnConfig = field(default_factory=VgcnConfig)
    vgcn_input: str = "tf"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigMismatch(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.classes < 2:
            raise ConfigMismatch("need at least 2 classes")
        if self.vgcn_input not in VGCN_INPUTS:
            raise ConfigMismatch(f"vgcn_input must be one of {VGCN_INPUTS}")
        if self.vocab_size <= 0:
            raise ConfigMismatch("vocab_size must be positive")

    @property
    def uses_encoder(self) -> bool:
        return self.mode != "vgcn-only"

    @property
    def uses_graph(self) -> bool:
        return self.mode != "bert-only"

    @property
    def uses_embeddings(self) -> bool:
        return self.uses_encoder or self.vgcn_input == "embedding"

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        obj = dict(obj)
        obj["encoder"] = EncoderConfig(**obj.get("encoder", {}))
        obj["vgcn"] = VgcnConfig(**obj.get("vgcn", {}))
        return cls(**obj)


@dataclass
class Batch:
    token_ids: np.ndarray  # (m, n) int
    mask: np.ndarray  # (m, n) 0/1
    tf: np.ndarray  # (m, v) term frequencies
    labels: np.ndarray  # (m,) hard labels, -1 when unknown
    soft_labels: np.ndarray | None = None  # (m, c)

    def __len__(self) -> int:
        return self.token_ids.shape[0]

    @classmethod
    def from_docs(cls, docs: Sequence[EncodedDocument], vocab_size: int, classes: int | None = None) -> "Batch":
        if not docs:
            raise ValueError("empty batch")
        lengths = {len(d.token_ids) for d in docs}
        if len(lengths) != 1:
            raise ConfigMismatch(f"documents encoded with different max_len: {sorted(lengths)}")
        labels = np.array([-1 if d.hard_label is None else d.hard_label for d in docs], dtype=np.int64)
        soft = None
        if all(d.soft_labels is not None for d in docs):
            soft = np.array([d.soft_labels for d in docs], dtype=np.float64)
        elif classes is not None and all(d.label is not None or d.soft_labels is not None for d in docs):
            soft = np.zeros((len(docs), classes))
            for row, d in enumerate(docs):
                if d.soft_labels is not None:
                    soft[row] = d.soft_labels
                else:
                    soft[row, d.label] = 1.0
        return cls(
            token_ids=np.array([d.token_ids for d in docs], dtype=np.int64),
            mask=np.array([d.attention_mask for d in docs], dtype=np.int8),
            tf=tf_matrix(docs, vocab_size),
            labels=labels,
            soft_labels=soft,
        )

    def select(self, index) -> "Batch":
        return Batch(
            self.token_ids[index],
            self.mask[index],
            self.tf[index],
            self.labels[index],
            None if self.soft_labels is None else self.soft_labels[index],
        )


@dataclass
class ModelOutput:
    logits: Tensor
    attentions: list[np.ndarray] | None = None
    stream: TokenStream | None = None
    graph_tokens: Tensor | None = None


def init_params(config: ModelConfig, dtype=np.float32) -> dict[str, Tensor]:
    """Initialize every parameter the mode needs from ``config.seed``.

    Draw order: encoder/embeddings, then VGCN weights, then the classifier head.
    """
    rng = np.random.Generator(np.random.Philox(config.seed))
    e = config.encoder.dim
    params: dict[str, Tensor] = {}
    if config.uses_embeddings:
        enc_params = enc.init_params(config.encoder, config.vocab_size, rng, dtype,
                                     graph_position=config.mode == "vgcn-bert")
        if not config.uses_encoder:
            enc_params = {"emb.word": enc_params["emb.word"]}
        params.update(enc_params)
    if config.uses_graph:
        if config.mode == "vgcn-only" and config.vgcn_input == "tf":
            vcfg = dataclasses.replace(config.vgcn, mode="classifier")
            params.update(vgcn.init_params(vcfg, config.vocab_size, config.classes, rng, dtype))
        else:
            vcfg = dataclasses.replace(config.vgcn, mode="embedding")
            params.update(vgcn.init_params(vcfg, config.vocab_size, None, rng, dtype))
    head_in = {
        "vgcn-bert": e,
        "bert-only": e,
        "vanilla-concat": 2 * e,
        "vgcn-only": config.vgcn.graph_embed * e,
    }[config.mode]
    if not (config.mode == "vgcn-only" and config.vgcn_input == "tf"):
        params["cls.W"], params["cls.b"] = enc._linear_init(rng, head_in, config.classes, dtype)
    return params


def param_names(config: ModelConfig) -> set[str]:
    """Parameter names for a mode (independent of sizes)."""
    tiny = dataclasses.replace(
        config,
        vocab_size=1,
        encoder=dataclasses.replace(config.encoder, dim=config.encoder.heads, ffn_dim=1, max_len=2),
        vgcn=dataclasses.replace(config.vgcn, hidden=1, graph_embed=1),
    )
    return set(init_params(tiny, np.float64))


class Classifier:
    """A ModelConfig plus its parameters."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, dtype=np.float32):
        self.config = config
        self.params = params if params is not None else init_params(config, dtype)
        expected = param_names(config)
        if set(self.params) != expected:
            raise ConfigMismatch(
                f"parameter names do not match mode {config.mode}: "
                f"missing {sorted(expected - set(self.params))}, extra {sorted(set(self.params) - expected)}"
            )

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ConfigMismatch("state dict names differ from model parameters")
        for name, arr in state.items():
            p = self.params[name]
            if p.shape != tuple(arr.shape):
                raise ConfigMismatch(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = np.array(arr, dtype=p.dtype, copy=True)

    def graph_input_vectors(self) -> Tensor:
        """Per-vocabulary-word vectors fed to the graph convolution, (v, e).

        These are the position-free input embeddings of word tokens: the word
        table row plus the shared word-kind vector when the encoder has one.
        The shared part is trained on every document, which keeps graph tokens
        meaningful for words whose own rows never received a gradient.
        """
        words = self.params["emb.word"]
        if "emb.kind" in self.params:
            words = T.add(words, T.take(self.params["emb.kind"], slice(enc.KIND_WORD, enc.KIND_WORD + 1)))
        return words

    def _graph_embedding(self, batch: Batch, graph: VocabGraph) -> Tensor:
        x = vgcn.document_slab(self.graph_input_vectors(), batch.tf)
        return vgcn.vgcn_embed(x, graph, self.params["vgcn.W_vh"], self.params["vgcn.W_hg"])

    def _head(self, features: Tensor, train: bool, rng) -> Tensor:
        features = T.dropout(features, self.config.encoder.dropout, train, rng)
        return T.add(T.matmul(features, self.params["cls.W"]), self.params["cls.b"])

    def forward(self, batch: Batch | Sequence[EncodedDocument], graph: VocabGraph | None,
                train: bool = False, rng: np.random.Generator | None = None) -> ModelOutput:
        cfg = self.config
        if not isinstance(batch, Batch):
            batch = Batch.from_docs(batch, cfg.vocab_size, cfg.classes)
        if cfg.uses_graph:
            if graph is None:
                raise ConfigMismatch(f"mode {cfg.mode} needs a vocabulary graph")
            if graph.size != cfg.vocab_size:
                raise ConfigMismatch(f"graph has {graph.size} nodes, model vocabulary has {cfg.vocab_size}")
        p = self.params

        if cfg.mode == "vgcn-only":
            if cfg.vgcn_input == "tf":
                logits = vgcn.vgcn_classify(batch.tf.astype(self.dtype), graph, p["vgcn.W_vh"], p["vgcn.W_hc"])
                return ModelOutput(logits)
            g = self._graph_embedding(batch, graph)
            flat = T.reshape(g, (len(batch), -1))
            return ModelOutput(self._head(flat, train, rng), graph_tokens=g)

        graph_tokens = self._graph_embedding(batch, graph) if cfg.mode in ("vgcn-bert", "vanilla-concat") else None
        stream = assemble(
            batch.token_ids, batch.mask, p, cfg.encoder,
            graph_tokens=graph_tokens if cfg.mode == "vgcn-bert" else None,
            train=train, rng=rng,
        )
        out = encode(stream, p, cfg.encoder, train, rng)
        cls = T.take(out.hidden, (slice(None), 0))
        if cfg.mode == "vanilla-concat":
            pooled = T.mean(graph_tokens, axis=1)
            cls = T.relu(T.concat([cls, pooled], axis=-1))
        return ModelOutput(self._head(cls, train, rng), out.attentions, stream, graph_tokens)

    def predict_proba(self, batch, graph) -> np.ndarray:
        logits = self.forward(batch, graph, train=False).logits
        return T.softmax(logits, axis=-1).data
