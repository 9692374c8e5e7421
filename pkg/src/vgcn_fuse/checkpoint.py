"""Model checkpoints: tensor blob plus model config and artifact hashes."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import CheckpointVersionError, GraphMismatch
from .io import atomic_write_bytes, file_sha256
from .model import Classifier, ModelConfig
from .tensor import CHECKPOINT_VERSION, Tensor, dump_params, load_params


def save_model(path, model: Classifier, graph_hash: str | None, vocab_hash: str | None = None,
               extra: dict | None = None) -> None:
    header = {
        "model_config": model.config.to_json(),
        "graph_hash": graph_hash,
        "vocab_hash": vocab_hash,
        **(extra or {}),
    }
    state = {name: p.data for name, p in model.params.items()}
    atomic_write_bytes(path, dump_params(state, header))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    header, params = load_params(Path(path).read_bytes())
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {header.get('version')!r}, this build reads {CHECKPOINT_VERSION}"
        )
    return header, params


def load_model(path, graph_path=None, vocab_path=None) -> tuple[Classifier, dict]:
    """Load a checkpoint, refusing graph/vocabulary files it was not trained with."""
    header, params = read_checkpoint(path)
    if graph_path is not None and header.get("graph_hash") is not None:
        actual = file_sha256(graph_path)
        if actual != header["graph_hash"]:
            raise GraphMismatch(f"{graph_path} has hash {actual[:12]}, checkpoint expects {header['graph_hash'][:12]}")
    if vocab_path is not None and header.get("vocab_hash") is not None:
        actual = file_sha256(vocab_path)
        if actual != header["vocab_hash"]:
            raise GraphMismatch(f"{vocab_path} has hash {actual[:12]}, checkpoint expects {header['vocab_hash'][:12]}")
    config = ModelConfig.from_json(header["model_config"])
    model = Classifier(config, {name: Tensor(arr, requires_grad=True) for name, arr in params.items()})
    return model, header
