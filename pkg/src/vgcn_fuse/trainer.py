"""Losses, class weighting, F1 reporting and the training loop."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import EmptyClass, ShapeMismatch
from .graph import VocabGraph
from .model import Batch, Classifier
from .tensor import AdamState, Tensor, adam_step, backward, record
from .text import EncodedDocument

log = logging.getLogger(__name__)

LOSSES = ("weighted-cross-entropy", "mse-soft-labels")


def class_weights(label_counts: Sequence[int]) -> np.ndarray:
    """Inverse-frequency weights N / (C * n_c)."""
    counts = [int(n) for n in label_counts]
    if any(n <= 0 for n in counts):
        raise EmptyClass(f"every class needs at least one example, got counts {counts}")
    total, n_classes = sum(counts), len(counts)
    return np.array([total / (n_classes * n) for n in counts], dtype=np.float64)


def weighted_cross_entropy(logits: Tensor, labels: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Batch mean of weight[y] * -log softmax(logits)[y]."""
    labels = np.asarray(labels)
    m, c = logits.shape
    if labels.shape != (m,):
        raise ShapeMismatch(f"labels {labels.shape} for logits {logits.shape}")
    weights = np.ones(c) if weights is None else np.asarray(weights, dtype=np.float64)
    if weights.shape != (c,):
        raise ShapeMismatch(f"weights {weights.shape} for {c} classes")
    picked = np.zeros((m, c), dtype=logits.dtype)
    picked[np.arange(m), labels] = weights[labels]
    return T.mul(T.sum_(T.mul(T.log_softmax(logits, axis=-1), Tensor(picked))), -1.0 / m)


def mse_soft(logits: Tensor, soft_labels: np.ndarray) -> Tensor:
    """Mean squared difference between softmax(logits) and target distributions."""
    soft_labels = np.asarray(soft_labels)
    if soft_labels.shape != logits.shape:
        raise ShapeMismatch(f"soft labels {soft_labels.shape} vs logits {logits.shape}")
    diff = T.sub(T.softmax(logits, axis=-1), Tensor(soft_labels.astype(logits.dtype)))
    return T.mean(T.mul(diff, diff))


@dataclass
class EvalReport:
    weighted_f1: float
    macro_f1: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    confusion: list[list[int]]
    loss: float | None = None
    accuracy: float = 0.0

    def to_json(self) -> dict:
        return {
            "weighted_f1": self.weighted_f1,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "loss": self.loss,
            "per_class": [
                {"class": c, "precision": p, "recall": r, "f1": f, "support": s}
                for c, (p, r, f, s) in enumerate(zip(self.precision, self.recall, self.f1, self.support))
            ],
            "confusion": self.confusion,
        }


def _safe_ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_report(predictions: Sequence[int], gold: Sequence[int], n_classes: int | None = None,
              loss: float | None = None) -> EvalReport:
    """Per-class and aggregate F1 from the confusion matrix (rows gold, columns predicted).

    Weighted F1 uses gold support shares; macro F1 averages over all classes,
    so a class absent from gold contributes 0.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ShapeMismatch(f"{pred.shape} predictions vs {gold.shape} gold labels")
    if n_classes is None:
        n_classes = int(max(pred.max(initial=-1), gold.max(initial=-1))) + 1
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (gold, pred), 1)
    tp = np.diag(confusion)
    predicted = confusion.sum(axis=0)
    support = confusion.sum(axis=1)
    precision = [_safe_ratio(tp[c], predicted[c]) for c in range(n_classes)]
    recall = [_safe_ratio(tp[c], support[c]) for c in range(n_classes)]
    f1 = [_safe_ratio(2 * p * r, p + r) for p, r in zip(precision, recall)]
    total = int(support.sum())
    # both aggregates are a weighted sum with the same reduction, so balanced
    # gold gives bit-identical weighted and macro values
    support_w = [_safe_ratio(int(s), total) for s in support]
    uniform_w = [1.0 / n_classes] * n_classes
    weighted = sum(f * w for f, w in zip(f1, support_w))
    macro = sum(f * w for f, w in zip(f1, uniform_w))
    return EvalReport(
        weighted_f1=float(weighted),
        macro_f1=float(macro),
        precision=[float(x) for x in precision],
        recall=[float(x) for x in recall],
        f1=[float(x) for x in f1],
        support=[int(s) for s in support],
        confusion=confusion.tolist(),
        loss=loss,
        accuracy=_safe_ratio(int(tp.sum()), total),
    )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 9
    batch_size: int = 16
    lr: float = 1e-5
    weight_decay: float = 0.01
    loss: str = "weighted-cross-entropy"
    class_weighting: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    val_report: EvalReport
    epoch_log: list[dict] = field(default_factory=list)
    test_report: EvalReport | None = None
    class_weights: np.ndarray | None = None


def _as_batch(model: Classifier, docs) -> Batch:
    if isinstance(docs, Batch):
        return docs
    return Batch.from_docs(docs, model.config.vocab_size, model.config.classes)


def compute_loss(logits: Tensor, batch: Batch, cfg: TrainConfig, weights: np.ndarray | None) -> Tensor:
    if cfg.loss == "mse-soft-labels":
        if batch.soft_labels is None:
            raise ValueError("mse-soft-labels loss needs soft labels (or hard labels to one-hot)")
        return mse_soft(logits, batch.soft_labels)
    if np.any(batch.labels < 0):
        raise ValueError("cross-entropy needs a label for every document")
    return weighted_cross_entropy(logits, batch.labels, weights)


def training_class_weights(batch: Batch, n_classes: int, cfg: TrainConfig) -> np.ndarray | None:
    if not cfg.class_weighting or cfg.loss != "weighted-cross-entropy":
        return None
    counts = np.bincount(batch.labels, minlength=n_classes)
    return class_weights(counts)


def evaluate(model: Classifier, docs: Batch | Sequence[EncodedDocument], graph: VocabGraph | None,
             cfg: TrainConfig | None = None, weights: np.ndarray | None = None) -> tuple[EvalReport, np.ndarray]:
    """Eval-mode pass in fixed-size batches. Returns the report and all logits."""
    cfg = cfg or TrainConfig()
    data = _as_batch(model, docs)
    labeled = bool(np.all(data.labels >= 0))
    logits, loss_sum = [], 0.0
    for start in range(0, len(data), cfg.batch_size):
        part = data.select(slice(start, start + cfg.batch_size))
        out = model.forward(part, graph, train=False).logits
        logits.append(out.data)
        if labeled:
            loss_sum += compute_loss(out, part, cfg, weights).item() * len(part)
    all_logits = np.concatenate(logits, axis=0)
    loss = loss_sum / len(data) if labeled else None
    report = f1_report(all_logits.argmax(axis=1), data.labels, model.config.classes, loss=loss)
    return report, all_logits


def train(model: Classifier, train_docs, val_docs, graph: VocabGraph | None, cfg: TrainConfig,
          test_docs=None) -> TrainResult:
    """Fixed-epoch training keeping the parameters with the best validation weighted F1.

    The model is left holding the best parameters on return.
    """
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    train_batch = _as_batch(model, train_docs)
    val_batch = _as_batch(model, val_docs)
    weights = training_class_weights(train_batch, model.config.classes, cfg)
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    best_state, best_epoch, best_f1, best_report = model.state_dict(), 0, -1.0, None
    epoch_log = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_batch))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            part = train_batch.select(order[start : start + cfg.batch_size])
            model.zero_grad()
            with record():
                logits = model.forward(part, graph, train=True, rng=rng).logits
                loss = compute_loss(logits, part, cfg, weights)
            backward(loss)
            adam_step(state, model.params)
            total += loss.item() * len(part)
        train_loss = total / len(train_batch)
        report, _ = evaluate(model, val_batch, graph, cfg, weights)
        epoch_log.append({"epoch": epoch, "train_loss": train_loss, "val": report.to_json()})
        log.info("epoch %d train_loss %.4f val_wf1 %.4f", epoch, train_loss, report.weighted_f1)
        if report.weighted_f1 > best_f1:
            best_f1, best_epoch, best_report = report.weighted_f1, epoch, report
            best_state = model.state_dict()
    model.zero_grad()
    model.load_state_dict(best_state)
    test_report = evaluate(model, test_docs, graph, cfg, weights)[0] if test_docs is not None else None
    return TrainResult(best_state, best_epoch, best_report, epoch_log, test_report, weights)
