"""Vocabulary-graph convolution fused with a self-attention text encoder."""

from .errors import VgcnFuseError
from .graph import VocabGraph, build_graph, count_windows
from .model import MODES, Batch, Classifier, ModelConfig
from .text import RawDocument, Vocabulary, build_vocab, encode, encode_corpus

__version__ = "0.1.0"

__all__ = [
    "MODES", "Batch", "Classifier", "ModelConfig", "RawDocument", "VgcnFuseError", "VocabGraph",
    "Vocabulary", "build_graph", "build_vocab", "count_windows", "encode", "encode_corpus",
]
