"""Simplex coefficients from alignment vectors: softmin-based pipelines.

The attentional pipeline applies a numerically stabilized softmin directly
to a distance vector; the normalized pipeline z-scores the vector first
(equivalent to an adaptive softmin temperature equal to the vector's own
standard deviation).  An entropic mirror-descent solver is included as an
independent check that the softmin is the minimizer of the linear-loss +
entropy objective.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .divergences import SENTINEL, AlignmentVector, DistanceMatrix
from .errors import ConvergenceError, MaskError

METHODS = ("attentional", "normalized", "neural", "oracle")

#: Population std below which a distance vector counts as constant.
DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class CoefficientVector:
    """Simplex weights over the bank for one query dataset."""

    bank_ids: tuple[str, ...]
    weights: np.ndarray
    method: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (len(self.bank_ids),):
            raise ValueError("weights length must match bank_ids")
        if weights.min() < 0:
            raise ValueError("weights must be non-negative")
        if abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bank_ids", tuple(self.bank_ids))

    def argmax_id(self) -> str:
        return self.bank_ids[int(np.argmax(self.weights))]


@dataclass(frozen=True)
class CoefficientMatrix:
    """Row i: coefficients predicting dataset i from the rest of the bank."""

    ids: tuple[str, ...]
    rows: tuple[CoefficientVector, ...]

    def __post_init__(self):
        if len(self.rows) != len(self.ids):
            raise ValueError("one coefficient row per id required")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "rows", tuple(self.rows))

    def to_array(self) -> np.ndarray:
        return np.stack([row.weights for row in self.rows])


def _default_ids(n: int) -> tuple[str, ...]:
    return tuple(str(k) for k in range(n))


def softmin(values: Sequence[float] | np.ndarray, temperature: float = 1.0,
            masked: Iterable[int] = (), bank_ids: Sequence[str] | None = None,
            method: str = "attentional") -> CoefficientVector:
    """w_k proportional to exp(-values_k / temperature) over unmasked entries.

    Stabilized by subtracting the unmasked minimum before exponentiation;
    masked entries get weight exactly 0.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    values = np.asarray(values, dtype=np.float64)
    masked = frozenset(int(k) for k in masked)
    n = values.size
    keep = np.array([k not in masked for k in range(n)], dtype=bool)
    if not keep.any():
        raise MaskError("softmin: all entries are masked")
    active = values[keep]
    if not np.all(np.isfinite(active)):
        raise ValueError("unmasked softmin inputs must be finite")
    shifted = (active - active.min()) / temperature
    expd = np.exp(-shifted)
    weights = np.zeros(n, dtype=np.float64)
    weights[keep] = expd / expd.sum()
    return CoefficientVector(bank_ids if bank_ids is not None else _default_ids(n),
                             weights, method)


def attentional(a: AlignmentVector) -> CoefficientVector:
    """Softmin at unit temperature over the raw alignment vector."""
    return softmin(a.values, 1.0, a.masked, bank_ids=a.bank_ids, method="attentional")


def normalized(a: AlignmentVector) -> CoefficientVector:
    """Z-score the unmasked distances (population std), then softmin.

    Equivalent to a softmin with adaptive temperature equal to the vector's
    own standard deviation; constant vectors fall back to uniform weights.
    """
    masked = a.masked
    n = a.values.size
    keep = np.array([k not in masked for k in range(n)], dtype=bool)
    if keep.sum() < 2:
        raise MaskError("normalized pipeline needs at least 2 unmasked entries")
    active = a.values[keep]
    mu = float(active.mean())
    sigma = float(active.std())
    weights = np.zeros(n, dtype=np.float64)
    if sigma < DEGENERATE_STD:
        weights[keep] = 1.0 / keep.sum()
        return CoefficientVector(a.bank_ids, weights, "normalized")
    z = np.full(n, SENTINEL, dtype=np.float64)
    z[keep] = (active - mu) / sigma
    return softmin(z, 1.0, masked, bank_ids=a.bank_ids, method="normalized")


def entropic_objective(weights: np.ndarray, rho: np.ndarray, alpha: float) -> float:
    """(1/K) sum w_k rho_k + (1/alpha) sum w_k ln w_k, with 0 ln 0 = 0."""
    k = rho.size
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(weights > 0, weights * np.log(weights), 0.0).sum()
    return float(weights @ rho) / k + float(ent) / alpha


def entropic_oracle(a: AlignmentVector, alpha: float, iterations: int = 500,
                    tolerance: float = 1e-8) -> CoefficientVector:
    """Minimize the entropic objective over the simplex by mirror descent.

    Multiplicative-weights iteration w <- normalize(w * exp(-eta * grad))
    with eta = alpha/2; an independent iterative check of the softmin
    optimality claim, not its closed form.  Converges when the objective
    change drops below ``tolerance`` and the iterate itself has stopped
    moving (max step < 1e-9), so the returned weights are resolved well
    past the objective tolerance.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    masked = a.masked
    n = a.values.size
    keep = np.array([j not in masked for j in range(n)], dtype=bool)
    if not keep.any():
        raise MaskError("entropic_oracle: all entries are masked")
    rho = a.values[keep]
    if not np.all(np.isfinite(rho)):
        raise ValueError("unmasked alignment values must be finite")
    k = rho.size
    w = np.full(k, 1.0 / k, dtype=np.float64)
    eta = alpha / 2.0
    previous = entropic_objective(w, rho, alpha)
    converged = False
    for _ in range(iterations):
        grad = rho / k + (np.log(w) + 1.0) / alpha
        w_next = w * np.exp(-eta * (grad - grad.min()))
        w_next = w_next / w_next.sum()
        current = entropic_objective(w_next, rho, alpha)
        step = float(np.max(np.abs(w_next - w)))
        w = w_next
        if abs(previous - current) < tolerance and step < 1e-9:
            converged = True
            break
        previous = current
    if not converged:
        raise ConvergenceError(
            f"entropic_oracle: objective not converged after {iterations} iterations"
        )
    weights = np.zeros(n, dtype=np.float64)
    weights[keep] = w
    return CoefficientVector(a.bank_ids, weights, "oracle")


def coefficient_matrix(d: DistanceMatrix, method: str) -> CoefficientMatrix:
    """Apply a pipeline to every row of a self-masked distance matrix."""
    if method not in ("attentional", "normalized"):
        raise ValueError(f"coefficient_matrix supports attentional/normalized, got {method!r}")
    if not d.self_masked:
        raise MaskError("coefficient_matrix requires a self-masked distance matrix")
    pipeline = attentional if method == "attentional" else normalized
    rows = tuple(pipeline(d.row_alignment(i)) for i in range(d.size))
    return CoefficientMatrix(d.ids, rows)


def save_coefficients(cm: CoefficientMatrix, metric: str, json_path: str | Path,
                      csv_path: str | Path | None = None) -> tuple[Path, Path]:
    """Emit the JSON coefficient export plus a CSV for spreadsheet inspection."""
    json_path = Path(json_path)
    csv_path = Path(csv_path) if csv_path is not None else json_path.with_suffix(".csv")
    method = cm.rows[0].method if cm.rows else "attentional"
    payload = {
        "method": method,
        "metric": metric,
        "ids": list(cm.ids),
        "rows": [[float(v) for v in row.weights] for row in cm.rows],
    }
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", *cm.ids])
        for ident, row in zip(cm.ids, cm.rows):
            writer.writerow([ident, *(repr(float(v)) for v in row.weights)])
    return json_path, csv_path


def load_coefficients(json_path: str | Path) -> tuple[CoefficientMatrix, str, str]:
    """Read a JSON coefficient export; returns (matrix, method, metric)."""
    payload = json.loads(Path(json_path).read_text(encoding="utf-8"))
    ids = tuple(payload["ids"])
    method = payload["method"]
    rows = tuple(CoefficientVector(ids, np.asarray(r, dtype=np.float64), method)
                 for r in payload["rows"])
    return CoefficientMatrix(ids, rows), method, payload["metric"]
