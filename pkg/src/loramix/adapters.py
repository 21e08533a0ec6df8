"""Loading, flattening, and convex recombination of LoRA adapter checkpoints.

Adapters are stored in the safetensors container; flattening concatenates
each tensor in lexicographic name order, row-major, into one float32
vector.  Mixture outputs are accumulated in double precision over
fixed-size chunks, so banks far larger than memory combine in O(chunk)
resident space, and results do not depend on chunking.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensorfile
from .errors import DuplicateIdError, LayoutMismatchError, TensorFileError, WeightSimplexError

#: Parameter count of the canonical production bank layout.
CANONICAL_TOTAL_PARAMS = 9_437_184

#: Values combined per accumulation chunk (f64 accumulator, f32 storage).
COMBINE_CHUNK = 1_048_576

#: Tolerance on |sum(weights) - 1| before a weight vector is rejected.
SIMPLEX_TOLERANCE = 1e-9


@dataclass(frozen=True)
class AdapterLayout:
    """Ordered tensor manifest shared by every adapter in a bank."""

    tensors: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        names = [name for name, _ in self.tensors]
        if names != sorted(names):
            raise LayoutMismatchError("layout tensors must be in lexicographic name order")
        if len(set(names)) != len(names):
            raise LayoutMismatchError("layout contains a duplicate tensor name")

    @property
    def total_params(self) -> int:
        return int(sum(int(np.prod(shape, dtype=np.int64)) if shape else 1
                       for _, shape in self.tensors))

    def first_difference(self, other: "AdapterLayout") -> str | None:
        """Name of the first tensor on which two layouts disagree, if any."""
        mine = dict(self.tensors)
        theirs = dict(other.tensors)
        for name in sorted(set(mine) | set(theirs)):
            if mine.get(name) != theirs.get(name):
                return name
        return None


@dataclass(frozen=True)
class FlatAdapter:
    """One adapter flattened to a single float32 parameter vector."""

    adapter_id: str
    layout: AdapterLayout
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.shape != (self.layout.total_params,):
            raise LayoutMismatchError(
                f"adapter '{self.adapter_id}': {values.size} values for a layout of "
                f"{self.layout.total_params} parameters"
            )
        if not np.all(np.isfinite(values)):
            raise TensorFileError(f"adapter '{self.adapter_id}' contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class AdapterBank:
    """Validated adapters sharing one bit-identical layout."""

    adapters: tuple[FlatAdapter, ...]

    @property
    def layout(self) -> AdapterLayout:
        return self.adapters[0].layout

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(a.adapter_id for a in self.adapters)

    def __len__(self) -> int:
        return len(self.adapters)


@dataclass(frozen=True)
class GramMatrix:
    """Pairwise inner products of flattened adapters, in double precision."""

    ids: tuple[str, ...]
    values: np.ndarray
    total_params: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        n = len(self.ids)
        if values.shape != (n, n):
            raise ValueError(f"gram matrix must be {n}x{n}")
        object.__setattr__(self, "values", values)


def load_adapter(path: str | Path, adapter_id: str | None = None) -> FlatAdapter:
    """Read a tensor file and flatten it (lexicographic names, row-major)."""
    path = Path(path)
    tensors, _ = tensorfile.read_tensors(path)
    if not tensors:
        raise TensorFileError(f"{path}: adapter file contains no tensors")
    names = sorted(tensors)
    layout = AdapterLayout(tuple((name, tuple(tensors[name].shape)) for name in names))
    flat = np.concatenate([np.ascontiguousarray(tensors[name]).reshape(-1) for name in names])
    return FlatAdapter(adapter_id or path.stem, layout, flat)


def unflatten(flat: FlatAdapter) -> list[tuple[str, tuple[int, ...], np.ndarray]]:
    """Exact inverse of the flattening performed by load_adapter."""
    out = []
    offset = 0
    for name, shape in flat.layout.tensors:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        out.append((name, shape, flat.values[offset:offset + count].reshape(shape)))
        offset += count
    return out


def save_adapter(flat: FlatAdapter, path: str | Path) -> Path:
    """Write an adapter back to the tensor container (canonical layout)."""
    tensors = {name: values for name, _, values in unflatten(flat)}
    return tensorfile.write_tensors(path, tensors)


def validate_bank(adapters: Sequence[FlatAdapter]) -> AdapterBank:
    """Check shared layout and unique ids; names the first differing tensor."""
    if not adapters:
        raise ValueError("bank must contain at least one adapter")
    ids = [a.adapter_id for a in adapters]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise DuplicateIdError(f"duplicate adapter id '{dup}'")
    reference = adapters[0].layout
    for adapter in adapters[1:]:
        if adapter.layout != reference:
            tensor = reference.first_difference(adapter.layout)
            raise LayoutMismatchError(
                f"adapter '{adapter.adapter_id}' layout differs from "
                f"'{adapters[0].adapter_id}' at tensor '{tensor}'"
            )
    return AdapterBank(tuple(adapters))


def _normalize_weights(weights, n: int) -> np.ndarray:
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    if w.shape != (n,):
        raise WeightSimplexError(f"weight vector has length {w.size}, bank has {n} adapters")
    if w.min() < 0:
        raise WeightSimplexError(f"weight vector has a negative entry ({w.min()!r})")
    total = float(w.sum())
    if abs(total - 1.0) > SIMPLEX_TOLERANCE:
        raise WeightSimplexError(f"weights sum to {total!r}, off the simplex beyond tolerance")
    return w / total


def combine(bank: AdapterBank, weights) -> FlatAdapter:
    """Convex combination of bank adapters: values[j] = sum_k w_k * theta_k[j].

    Accumulates in float64 over COMBINE_CHUNK-sized chunks and stores
    float32.  Zero-weight adapters contribute nothing and are skipped, so a
    one-hot weight vector reproduces its adapter bit-exactly.
    """
    w = _normalize_weights(weights, len(bank))
    p = bank.layout.total_params
    out = np.empty(p, dtype=np.float32)
    active = [(float(w[k]), bank.adapters[k].values) for k in range(len(bank)) if w[k] != 0.0]
    for start in range(0, p, COMBINE_CHUNK):
        stop = min(start + COMBINE_CHUNK, p)
        # seed from the first term, not zeros: 0.0 + (-0.0) would lose the
        # sign of zero and break one-hot byte-exactness
        acc = active[0][0] * active[0][1][start:stop].astype(np.float64)
        for wk, values in active[1:]:
            acc += wk * values[start:stop].astype(np.float64)
        out[start:stop] = acc.astype(np.float32)
    return FlatAdapter("mixture", bank.layout, out)


class _StreamedAdapter:
    """Chunked reads of a flattened adapter straight from its file."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.entries = tensorfile.read_layout_entries(self.path)
        self.layout = AdapterLayout(tuple((name, shape) for name, shape, _, _ in self.entries))
        starts = []
        offset = 0
        for name, shape, file_start, file_end in self.entries:
            count = (file_end - file_start) // 4
            starts.append((offset, offset + count, file_start))
            offset += count
        self._spans = starts
        self._fh = self.path.open("rb")

    def read(self, start: int, stop: int) -> np.ndarray:
        pieces = []
        for flat_start, flat_end, file_start in self._spans:
            lo = max(start, flat_start)
            hi = min(stop, flat_end)
            if lo >= hi:
                continue
            self._fh.seek(file_start + (lo - flat_start) * 4)
            raw = self._fh.read((hi - lo) * 4)
            if len(raw) != (hi - lo) * 4:
                raise TensorFileError(f"{self.path}: payload truncated during streamed read")
            pieces.append(np.frombuffer(raw, dtype="<f4"))
        return np.concatenate(pieces) if pieces else np.empty(0, dtype=np.float32)

    def close(self):
        self._fh.close()


def combine_streamed(paths: Sequence[str | Path], weights,
                     chunk: int = COMBINE_CHUNK) -> FlatAdapter:
    """Out-of-core variant of :func:`combine` reading adapters per chunk.

    At most one adapter chunk plus the accumulator is resident at a time;
    the result is bit-identical to the in-memory combine.
    """
    if not paths:
        raise ValueError("combine_streamed needs at least one adapter path")
    readers = [_StreamedAdapter(p) for p in paths]
    try:
        reference = readers[0].layout
        for reader in readers[1:]:
            if reader.layout != reference:
                tensor = reference.first_difference(reader.layout)
                raise LayoutMismatchError(
                    f"adapter file '{reader.path}' layout differs at tensor '{tensor}'"
                )
        w = _normalize_weights(weights, len(readers))
        active = [(float(w[k]), readers[k]) for k in range(len(readers)) if w[k] != 0.0]
        p = reference.total_params
        out = np.empty(p, dtype=np.float32)
        for start in range(0, p, chunk):
            stop = min(start + chunk, p)
            # first-term seeding mirrors combine() exactly (sign of zero)
            acc = active[0][0] * active[0][1].read(start, stop).astype(np.float64)
            for wk, reader in active[1:]:
                acc += wk * reader.read(start, stop).astype(np.float64)
            out[start:stop] = acc.astype(np.float32)
        return FlatAdapter("mixture", reference, out)
    finally:
        for reader in readers:
            reader.close()


def gram_matrix(bank: AdapterBank, chunk: int = COMBINE_CHUNK) -> GramMatrix:
    """values[i][j] = <theta_i, theta_j> accumulated in double precision.

    Chunked over the parameter axis so the f64 working set stays bounded;
    symmetrized exactly after accumulation.
    """
    n = len(bank)
    p = bank.layout.total_params
    gram = np.zeros((n, n), dtype=np.float64)
    for start in range(0, p, chunk):
        stop = min(start + chunk, p)
        block = np.stack([a.values[start:stop].astype(np.float64) for a in bank.adapters])
        gram += block @ block.T
    gram = 0.5 * (gram + gram.T)
    return GramMatrix(bank.ids, gram, total_params=p)
