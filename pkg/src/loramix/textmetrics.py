"""Text-level evaluation: Rouge-L (LCS F1) and Exact Match, with aggregation.

Rouge-L operates on whitespace tokens after trimming, case-sensitive, no
stemming; the score is the F1 of LCS precision and recall.  Exact Match
compares trimmed strings byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DatasetFormatError


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Classic O(len(a) * len(b)) dynamic program, single rolling row."""
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            current[j] = previous[j - 1] + 1 if x == y else max(previous[j], current[j - 1])
        previous = current
    return previous[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F1 over whitespace tokens; 0 when either side is empty."""
    cand = candidate.strip().split()
    ref = reference.strip().split()
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


def exact_match(candidate: str, reference: str) -> int:
    """1 iff the trimmed strings are byte-equal, else 0."""
    return int(candidate.strip() == reference.strip())


def aggregate(scores: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation."""
    if len(scores) == 0:
        raise ValueError("aggregate requires at least one score")
    arr = np.asarray(scores, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def score_pairs_file(path: str | Path) -> dict:
    """Batch-score a line-delimited JSON file of candidate/reference pairs.

    Output mirrors the batch interface: mean and population std for both
    metrics plus the pair count.
    """
    path = Path(path)
    rouge_scores: list[float] = []
    em_scores: list[float] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(record, dict) or "candidate" not in record or "reference" not in record:
                raise DatasetFormatError(
                    f"{path}:{lineno}: record must carry 'candidate' and 'reference'"
                )
            rouge_scores.append(rouge_l(str(record["candidate"]), str(record["reference"])))
            em_scores.append(float(exact_match(str(record["candidate"]), str(record["reference"]))))
    if not rouge_scores:
        raise DatasetFormatError(f"{path}: file contains no pairs")
    r_mean, r_std = aggregate(rouge_scores)
    e_mean, e_std = aggregate(em_scores)
    return {
        "rouge_l": {"mean": r_mean, "std": r_std},
        "exact_match": {"mean": e_mean, "std": e_std},
        "n": len(rouge_scores),
    }
