"""Dataset ingestion, label remapping, vocabulary, tokenization, batching.

Two on-disk formats are supported, both UTF-8:
  - jsonl: one object per line with keys "text" and "label"
    (lowercase class name), optional "source".
  - star_csv: header "stars,text", stars 1-5, text quoted per RFC 4180;
    stars are remapped 1,2 -> negative, 3 -> neutral, 4,5 -> positive.

Label indices are fixed everywhere: negative=0, neutral=1, positive=2.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LABELS = ("negative", "neutral", "positive")
LABEL_TO_INDEX = {name: i for i, name in enumerate(LABELS)}

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
RESERVED_TOKENS = ("<pad>", "<unk>", "<cls>", "<sep>", "<mask>")

_TOKEN_RE = re.compile(r"[\w']+|[^\w\s]")


class DataFormatError(ValueError):
    """Raised when an input file cannot be read as the requested format."""


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: str
    source: str = "unknown"

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("example text is empty after trimming")
        if self.label not in LABEL_TO_INDEX:
            raise ValueError(f"unknown label {self.label!r}")

    @property
    def label_index(self) -> int:
        return LABEL_TO_INDEX[self.label]


def remap_stars(stars: int) -> str:
    """Map a 1-5 star rating onto the three-class label space."""
    if stars in (1, 2):
        return "negative"
    if stars == 3:
        return "neutral"
    if stars in (4, 5):
        return "positive"
    raise ValueError(f"star rating must be 1..5, got {stars!r}")


def tokenize(text: str) -> list[str]:
    """Lowercased word/punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocab:
    """Token-to-id bijection with fixed reserved ids."""

    itos: list[str]
    min_count: int = 1
    stoi: dict = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.itos[:5]) != RESERVED_TOKENS:
            raise ValueError("vocab must start with the reserved tokens")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocab contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.itos)

    def encode_token(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def content_hash(self) -> str:
        blob = "\n".join(self.itos).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocab:
    """Frequency-then-lexicographic vocabulary over tokenized texts."""
    counts = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    kept = [(tok, n) for tok, n in counts.items() if n >= min_count]
    kept.sort(key=lambda kv: (-kv[1], kv[0]))
    return Vocab(list(RESERVED_TOKENS) + [tok for tok, _ in kept], min_count=min_count)


@dataclass
class TokenizedBatch:
    """Padded [B, L] token ids with attention mask and label indices."""

    token_ids: np.ndarray      # int64 [B, L]
    attention_mask: np.ndarray  # int64 0/1 [B, L]
    labels: np.ndarray          # int64 [B], -1 where unlabeled

    def __post_init__(self):
        assert self.token_ids.shape == self.attention_mask.shape
        assert self.labels.shape == (self.token_ids.shape[0],)

    @property
    def size(self) -> int:
        return int(self.token_ids.shape[0])

    @property
    def length(self) -> int:
        return int(self.token_ids.shape[1])

    def copy(self) -> "TokenizedBatch":
        return TokenizedBatch(self.token_ids.copy(), self.attention_mask.copy(),
                              self.labels.copy())


def encode_texts(texts: Sequence[str], vocab: Vocab, max_length: int,
                 labels: Optional[Sequence[int]] = None) -> TokenizedBatch:
    """[cls] tokens [sep], truncated to max_length keeping the sep, padded."""
    if max_length < 2:
        raise ValueError(f"max_length must be >= 2, got {max_length}")
    n = len(texts)
    ids = np.full((n, max_length), PAD, dtype=np.int64)
    mask = np.zeros((n, max_length), dtype=np.int64)
    for i, text in enumerate(texts):
        row = [CLS] + [vocab.encode_token(t) for t in tokenize(text)] + [SEP]
        if len(row) > max_length:
            row = row[: max_length - 1] + [SEP]
        ids[i, : len(row)] = row
        mask[i, : len(row)] = 1
    if labels is None:
        lab = np.full(n, -1, dtype=np.int64)
    else:
        lab = np.asarray(labels, dtype=np.int64)
    return TokenizedBatch(ids, mask, lab)


def encode_batch(examples: Sequence[LabeledExample], vocab: Vocab,
                 max_length: int) -> TokenizedBatch:
    return encode_texts([e.text for e in examples], vocab, max_length,
                        labels=[e.label_index for e in examples])


@dataclass(frozen=True)
class ClassDistribution:
    negative: int = 0
    neutral: int = 0
    positive: int = 0

    @property
    def total(self) -> int:
        return self.negative + self.neutral + self.positive

    def count(self, label: str) -> int:
        return getattr(self, label)

    def as_dict(self) -> dict:
        return {name: self.count(name) for name in LABELS}


def class_distribution(examples: Iterable[LabeledExample]) -> ClassDistribution:
    counts = Counter(e.label for e in examples)
    return ClassDistribution(**{name: counts.get(name, 0) for name in LABELS})


class LoadResult(NamedTuple):
    examples: list
    skipped: int


def load_dataset(path, fmt: str = "jsonl", source: Optional[str] = None) -> LoadResult:
    """Parse a dataset file; malformed rows are counted and skipped.

    More than 10% malformed rows means the format is probably wrong, which is
    an error rather than a warning.
    """
    path = Path(path)
    if fmt not in ("jsonl", "star_csv"):
        raise ValueError(f"unknown dataset format {fmt!r}")
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    tag = source if source is not None else path.stem

    examples: list[LabeledExample] = []
    bad: list[int] = []
    if fmt == "jsonl":
        rows = [ln for ln in raw.splitlines() if ln.strip()]
        for i, line in enumerate(rows):
            try:
                obj = json.loads(line)
                examples.append(LabeledExample(
                    text=str(obj["text"]), label=str(obj["label"]),
                    source=str(obj.get("source", tag))))
            except (KeyError, TypeError, ValueError):
                bad.append(i)
    else:
        rows = list(csv.reader(raw.splitlines()))
        if rows and [c.strip().lower() for c in rows[0]] == ["stars", "text"]:
            rows = rows[1:]
        for i, row in enumerate(rows):
            if not row:
                continue
            try:
                stars = int(row[0])
                examples.append(LabeledExample(
                    text=row[1], label=remap_stars(stars), source=tag))
            except (IndexError, ValueError):
                bad.append(i)

    total = len(examples) + len(bad)
    if total == 0:
        logger.warning("%s: empty dataset file", path)
        return LoadResult([], 0)
    if len(bad) > 0.10 * total:
        raise DataFormatError(
            f"{path}: {len(bad)}/{total} rows malformed; wrong format? "
            f"(first bad row index: {bad[0]})")
    if bad:
        logger.warning("%s: skipped %d malformed rows (indices %s%s)", path,
                       len(bad), bad[:5], "..." if len(bad) > 5 else "")
    return LoadResult(examples, len(bad))


def save_jsonl(examples: Iterable[LabeledExample], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in examples:
            f.write(json.dumps({"text": e.text, "label": e.label,
                                "source": e.source}) + "\n")
