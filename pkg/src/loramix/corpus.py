"""Token dataset ingestion and reduction to empirical token distributions.

Datasets are exchanged as UTF-8 line-delimited JSON: one ``{"ids": [...]}``
record per example, with an optional first line
``{"meta": {"dataset_id": ..., "vocab_size": ...}}``.  A dataset is reduced
to its token-unigram distribution over vocabulary indices plus the flat
token sample, which together feed every divergence in this package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DatasetFormatError, VocabMismatchError


def _as_id_array(ids: Sequence[int] | np.ndarray) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise DatasetFormatError("example ids must be a non-empty 1-D sequence")
    if arr.min() < 0:
        raise DatasetFormatError("token ids must be non-negative")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TokenizedExample:
    """One example: the tokenized input followed by the output, as token ids."""

    ids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", _as_id_array(self.ids))

    def __eq__(self, other):
        return isinstance(other, TokenizedExample) and np.array_equal(self.ids, other.ids)


@dataclass(frozen=True)
class TokenizedDataset:
    """A named collection of tokenized examples over a fixed vocabulary."""

    dataset_id: str
    vocab_size: int
    examples: tuple[TokenizedExample, ...]

    def __post_init__(self):
        if not self.dataset_id:
            raise DatasetFormatError("dataset_id must be non-empty")
        if self.vocab_size <= 0:
            raise DatasetFormatError("vocab_size must be positive")
        examples = tuple(self.examples)
        if not examples:
            raise DatasetFormatError(f"dataset '{self.dataset_id}' has no examples")
        for ex in examples:
            if ex.ids.max() >= self.vocab_size:
                raise DatasetFormatError(
                    f"dataset '{self.dataset_id}': token id {int(ex.ids.max())} "
                    f">= vocab_size {self.vocab_size}"
                )
        object.__setattr__(self, "examples", examples)

    @classmethod
    def from_sequences(cls, dataset_id: str, vocab_size: int,
                       sequences: Iterable[Sequence[int]]) -> "TokenizedDataset":
        return cls(dataset_id, vocab_size, tuple(TokenizedExample(s) for s in sequences))

    def flat_ids(self) -> np.ndarray:
        """All token ids of all examples, concatenated in example order."""
        return np.concatenate([ex.ids for ex in self.examples])

    @property
    def total_tokens(self) -> int:
        return sum(ex.ids.size for ex in self.examples)

    def __eq__(self, other):
        return (
            isinstance(other, TokenizedDataset)
            and self.dataset_id == other.dataset_id
            and self.vocab_size == other.vocab_size
            and len(self.examples) == len(other.examples)
            and all(a == b for a, b in zip(self.examples, other.examples))
        )


@dataclass(frozen=True)
class EmpiricalTokenDistribution:
    """A dataset reduced to a probability vector and a token sample.

    ``probs`` is the (optionally smoothed) unigram distribution over
    vocabulary indices; ``token_sample`` carries raw token ids for
    sample-based metrics.
    """

    vocab_size: int
    probs: np.ndarray
    token_sample: np.ndarray
    smoothing_epsilon: float = 0.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != (self.vocab_size,):
            raise ValueError(f"probs must have shape ({self.vocab_size},)")
        if probs.min() < 0:
            raise ValueError("probabilities must be non-negative")
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        if self.smoothing_epsilon < 0:
            raise ValueError("smoothing_epsilon must be non-negative")
        if self.smoothing_epsilon > 0 and probs.min() <= 0:
            raise ValueError("smoothed distribution must be strictly positive")
        sample = np.asarray(self.token_sample, dtype=np.int64)
        if sample.size and (sample.min() < 0 or sample.max() >= self.vocab_size):
            raise ValueError("token_sample contains out-of-range ids")
        probs.setflags(write=False)
        sample.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "token_sample", sample)

    def with_sample(self, sample: np.ndarray) -> "EmpiricalTokenDistribution":
        return replace(self, token_sample=sample)


def load_token_dataset(path: str | Path, expected_vocab: int | None = None) -> TokenizedDataset:
    """Parse a line-delimited token dataset file.

    ``expected_vocab`` is required when the file carries no meta line; when
    both are present they must agree.  Malformed records and out-of-range
    token ids are reported with their line number.
    """
    path = Path(path)
    dataset_id = path.stem
    vocab_size = expected_vocab
    examples: list[TokenizedExample] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(record, dict):
                raise DatasetFormatError(f"{path}:{lineno}: record must be a JSON object")
            if lineno == 1 and "meta" in record:
                meta = record["meta"]
                if not isinstance(meta, dict):
                    raise DatasetFormatError(f"{path}:1: meta must be an object")
                dataset_id = meta.get("dataset_id", dataset_id)
                if "vocab_size" in meta:
                    mv = meta["vocab_size"]
                    if not isinstance(mv, int) or mv <= 0:
                        raise DatasetFormatError(f"{path}:1: meta vocab_size must be a positive integer")
                    if expected_vocab is not None and mv != expected_vocab:
                        raise VocabMismatchError(
                            f"{path}: meta vocab_size {mv} != expected {expected_vocab}"
                        )
                    vocab_size = mv
                continue
            if "ids" not in record:
                raise DatasetFormatError(f"{path}:{lineno}: missing 'ids' field")
            ids = record["ids"]
            if (not isinstance(ids, list) or not ids
                    or not all(isinstance(v, int) and v >= 0 for v in ids)):
                raise DatasetFormatError(
                    f"{path}:{lineno}: 'ids' must be a non-empty list of non-negative integers"
                )
            if vocab_size is not None:
                bad = max(ids)
                if bad >= vocab_size:
                    raise DatasetFormatError(
                        f"{path}:{lineno}: token id {bad} out of range for vocab_size {vocab_size}"
                    )
            examples.append(TokenizedExample(ids))
    if not examples:
        raise DatasetFormatError(f"{path}: file contains no examples")
    if vocab_size is None:
        raise DatasetFormatError(f"{path}: no meta line and no expected_vocab supplied")
    return TokenizedDataset(dataset_id, vocab_size, tuple(examples))


def write_token_dataset(ds: TokenizedDataset, path: str | Path) -> Path:
    """Serialize a dataset to the line-delimited interchange format."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        meta = {"meta": {"dataset_id": ds.dataset_id, "vocab_size": ds.vocab_size}}
        fh.write(json.dumps(meta, separators=(",", ":")) + "\n")
        for ex in ds.examples:
            fh.write(json.dumps({"ids": [int(v) for v in ex.ids]}, separators=(",", ":")) + "\n")
    return path


def byte_fallback_tokenize(text: str) -> TokenizedExample:
    """Tokenize text as its UTF-8 bytes (vocab size 256); self-contained for tests."""
    if not text:
        raise ValueError("cannot tokenize empty text: examples must be non-empty")
    return TokenizedExample(np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64))


BYTE_FALLBACK_VOCAB = 256


def byte_fallback_decode(ids: Sequence[int] | np.ndarray) -> str:
    """Inverse of :func:`byte_fallback_tokenize` on valid UTF-8 byte sequences."""
    return bytes(int(v) for v in ids).decode("utf-8")


def to_empirical_distribution(ds: TokenizedDataset, epsilon: float = 0.0) -> EmpiricalTokenDistribution:
    """Reduce a dataset to its (smoothed) token-unigram distribution.

    probs[v] = (count(v) + epsilon) / (total + epsilon * vocab_size); the
    token sample is the full flattened id sequence.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    flat = ds.flat_ids()
    counts = np.bincount(flat, minlength=ds.vocab_size).astype(np.float64)
    total = float(flat.size)
    probs = (counts + epsilon) / (total + epsilon * ds.vocab_size)
    return EmpiricalTokenDistribution(ds.vocab_size, probs, flat, smoothing_epsilon=epsilon)


def subsample_tokens(ds: TokenizedDataset, m: int, seed: int) -> np.ndarray:
    """Sample up to ``m`` tokens without replacement, deterministically in ``seed``."""
    if m <= 0:
        raise ValueError("m must be positive")
    flat = ds.flat_ids()
    if flat.size <= m:
        return flat
    rng = np.random.default_rng(seed)
    idx = rng.choice(flat.size, size=m, replace=False)
    return flat[idx]
