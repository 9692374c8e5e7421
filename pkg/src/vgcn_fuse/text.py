"""Corpus ingestion, cleaning, tokenization, vocabulary and document encoding."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CorpusFormatError, EmptyVocabulary, InvalidDocument

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
NUM_SPECIALS = len(SPECIAL_TOKENS)

VOCAB_FORMAT_VERSION = 1

_URL_RE = re.compile(r"(?:[a-z][a-z0-9+.\-]*://|www\.)\S*")
_MENTION_RE = re.compile(r"@\w+")
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


@dataclass(frozen=True)
class RawDocument:
    text: str
    label: int | None = None
    soft_labels: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.label is not None and self.soft_labels is not None:
            raise InvalidDocument("document has both label and soft_labels")
        if self.label is not None:
            if isinstance(self.label, bool) or not isinstance(self.label, int) or self.label < 0:
                raise InvalidDocument(f"label must be a non-negative integer, got {self.label!r}")
        if self.soft_labels is not None:
            probs = tuple(float(p) for p in self.soft_labels)
            if not probs or any(not math.isfinite(p) or p < 0 for p in probs):
                raise InvalidDocument("soft_labels must be non-negative and finite")
            if abs(math.fsum(probs) - 1.0) > 1e-9:
                raise InvalidDocument(f"soft_labels sum to {math.fsum(probs)!r}, expected 1")
            object.__setattr__(self, "soft_labels", probs)

    @property
    def is_labeled(self) -> bool:
        return self.label is not None or self.soft_labels is not None

    @property
    def hard_label(self) -> int | None:
        """The integer class, taking the argmax of soft labels when needed."""
        if self.label is not None:
            return self.label
        if self.soft_labels is not None:
            return max(range(len(self.soft_labels)), key=lambda c: (self.soft_labels[c], -c))
        return None


def clean(text: str) -> str:
    """Lower-case, strip URLs and @-mentions, collapse whitespace.

    Removing a span can glue two fragments into a fresh URL or mention, so the
    rules are re-applied until nothing changes; this makes the function
    idempotent.
    """
    prev = None
    while text != prev:
        prev = text
        text = text.lower()
        text = _URL_RE.sub(" ", text)
        text = _MENTION_RE.sub(" ", text)
        text = " ".join(text.split())
    return text


def tokenize(text: str) -> list[str]:
    """Split on whitespace; every punctuation character is its own token."""
    return _TOKEN_RE.findall(text)


def doc_tokens(text: str) -> list[str]:
    return tokenize(clean(text))


@dataclass(frozen=True)
class Vocabulary:
    """Token/id map. Ids 0-3 are the special tokens, in SPECIAL_TOKENS order."""

    tokens: tuple[str, ...]
    freqs: tuple[int, ...]
    min_freq: int = 1
    ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.tokens[:NUM_SPECIALS] != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        if len(self.tokens) != len(self.freqs):
            raise ValueError("tokens and freqs differ in length")
        ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(ids) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def specials(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}

    def id_of(self, token: str) -> int:
        return self.ids.get(token, UNK_ID)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def to_json(self) -> dict:
        return {
            "version": VOCAB_FORMAT_VERSION,
            "min_freq": self.min_freq,
            "tokens": list(self.tokens[NUM_SPECIALS:]),
            "freqs": list(self.freqs[NUM_SPECIALS:]),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        if obj.get("version") != VOCAB_FORMAT_VERSION:
            raise ValueError(f"unsupported vocabulary version {obj.get('version')!r}")
        tokens, freqs = obj["tokens"], obj["freqs"]
        return cls(
            tokens=SPECIAL_TOKENS + tuple(tokens),
            freqs=(0,) * NUM_SPECIALS + tuple(int(f) for f in freqs),
            min_freq=int(obj["min_freq"]),
        )

    def save(self, path) -> None:
        from .io import atomic_write_text

        atomic_write_text(path, json.dumps(self.to_json(), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def count_tokens(texts: Iterable[str]) -> Counter:
    counts: Counter = Counter()
    for text in texts:
        counts.update(doc_tokens(text))
    return counts


def build_vocab(corpus: Sequence[RawDocument], min_freq: int = 2) -> Vocabulary:
    if not corpus:
        raise EmptyVocabulary("corpus is empty")
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = count_tokens(doc.text for doc in corpus)
    kept = sorted(
        ((tok, n) for tok, n in counts.items() if n >= min_freq),
        key=lambda item: (-item[1], item[0]),
    )
    if not kept:
        raise EmptyVocabulary(f"no token occurs at least {min_freq} times")
    return Vocabulary(
        tokens=SPECIAL_TOKENS + tuple(tok for tok, _ in kept),
        freqs=(0,) * NUM_SPECIALS + tuple(n for _, n in kept),
        min_freq=min_freq,
    )


@dataclass(frozen=True)
class EncodedDocument:
    token_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    vocab_tf: dict[int, int]
    label: int | None = None
    soft_labels: tuple[float, ...] | None = None

    @property
    def n_body(self) -> int:
        return sum(self.attention_mask) - 1

    @property
    def hard_label(self) -> int | None:
        return RawDocument("", self.label, self.soft_labels).hard_label


def encode(doc: RawDocument, vocab: Vocabulary, max_len: int = 200) -> EncodedDocument:
    """[CLS] + ids, truncated to max_len - 1 body tokens, padded to max_len."""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    body = [vocab.id_of(tok) for tok in doc_tokens(doc.text)][: max_len - 1]
    n_pad = max_len - 1 - len(body)
    token_ids = (CLS_ID, *body) + (PAD_ID,) * n_pad
    mask = (1,) * (1 + len(body)) + (0,) * n_pad
    tf = Counter(i for i in body if i >= NUM_SPECIALS)
    return EncodedDocument(
        token_ids=token_ids,
        attention_mask=mask,
        vocab_tf=dict(sorted(tf.items())),
        label=doc.label,
        soft_labels=doc.soft_labels,
    )


def encode_corpus(docs: Iterable[RawDocument], vocab: Vocabulary, max_len: int = 200) -> list[EncodedDocument]:
    return [encode(doc, vocab, max_len) for doc in docs]


def parse_record(obj, path="<corpus>", line: int = 0, labeled: bool = True) -> RawDocument:
    if not isinstance(obj, dict):
        raise CorpusFormatError(path, line, "expected a JSON object")
    unknown = set(obj) - {"text", "label", "soft_labels"}
    if unknown:
        raise CorpusFormatError(path, line, f"unknown keys {sorted(unknown)}")
    text = obj.get("text")
    if not isinstance(text, str):
        raise CorpusFormatError(path, line, "'text' must be a string")
    soft = obj.get("soft_labels")
    if soft is not None and not (isinstance(soft, list) and all(isinstance(p, (int, float)) for p in soft)):
        raise CorpusFormatError(path, line, "'soft_labels' must be a list of numbers")
    try:
        doc = RawDocument(text, obj.get("label"), tuple(soft) if soft is not None else None)
    except InvalidDocument as exc:
        raise CorpusFormatError(path, line, str(exc)) from None
    if labeled and not doc.is_labeled:
        raise CorpusFormatError(path, line, "missing 'label' or 'soft_labels'")
    return doc


def read_jsonl(path, labeled: bool = True) -> list[RawDocument]:
    """Read a JSON Lines corpus. Blank lines are skipped.

    Raises:
        FileNotFoundError: the path does not exist.
        CorpusFormatError: a line is not valid JSON or violates the record schema.
    """
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
            docs.append(parse_record(obj, path, lineno, labeled))
    return docs


def write_jsonl(path, docs: Iterable[RawDocument]) -> None:
    from .io import atomic_write_text

    lines = []
    for doc in docs:
        rec: dict = {"text": doc.text}
        if doc.label is not None:
            rec["label"] = doc.label
        if doc.soft_labels is not None:
            rec["soft_labels"] = list(doc.soft_labels)
        lines.append(json.dumps(rec, ensure_ascii=False))
    atomic_write_text(path, "".join(line + "\n" for line in lines))
