"""Minimal reader/writer for the safetensors container format.

Layout: an 8-byte little-endian header length, a JSON header mapping each
tensor name to ``{"dtype", "shape", "data_offsets"}`` (offsets relative to
the start of the byte buffer that follows), then the raw little-endian
tensor payload.  Only dtype F32 is accepted in v1.  The writer emits
tensors in lexicographic name order with a canonical compact header, so
identical inputs always produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import TensorFileError

_HEADER_LEN_BYTES = 8
_SUPPORTED_DTYPES = {"F32": np.dtype("<f4")}


def _parse_header(raw: bytes, path: Path) -> tuple[dict, dict]:
    """Decode the JSON header, rejecting duplicate tensor names."""

    def no_duplicates(pairs):
        seen = {}
        for key, value in pairs:
            if key in seen:
                raise TensorFileError(f"{path}: duplicate tensor name '{key}'")
            seen[key] = value
        return seen

    try:
        header = json.loads(raw.decode("utf-8"), object_pairs_hook=no_duplicates)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorFileError(f"{path}: invalid header JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise TensorFileError(f"{path}: header must be a JSON object")
    metadata = header.pop("__metadata__", {})
    return header, metadata


def read_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read all tensors and optional metadata from a container file.

    Returns tensors keyed by name (row-major float32 arrays) plus the
    ``__metadata__`` mapping.  Raises TensorFileError for truncation,
    duplicate names, or unsupported dtypes (naming the offending tensor).
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER_LEN_BYTES:
        raise TensorFileError(f"{path}: file too short for header length")
    (header_len,) = struct.unpack("<Q", blob[:_HEADER_LEN_BYTES])
    header_end = _HEADER_LEN_BYTES + header_len
    if len(blob) < header_end:
        raise TensorFileError(f"{path}: truncated header")
    header, metadata = _parse_header(blob[_HEADER_LEN_BYTES:header_end], path)
    buffer = blob[header_end:]

    tensors: dict[str, np.ndarray] = {}
    for name, entry in header.items():
        if not isinstance(entry, dict):
            raise TensorFileError(f"{path}: tensor '{name}' entry must be an object")
        dtype_tag = entry.get("dtype")
        if dtype_tag not in _SUPPORTED_DTYPES:
            raise TensorFileError(
                f"{path}: tensor '{name}' has unsupported dtype {dtype_tag!r} (only F32 accepted)"
            )
        shape = entry.get("shape")
        if not isinstance(shape, list) or not all(isinstance(d, int) and d >= 0 for d in shape):
            raise TensorFileError(f"{path}: tensor '{name}' has invalid shape {shape!r}")
        offsets = entry.get("data_offsets")
        if (not isinstance(offsets, list) or len(offsets) != 2
                or not all(isinstance(o, int) for o in offsets)):
            raise TensorFileError(f"{path}: tensor '{name}' has invalid data_offsets")
        start, end = offsets
        dtype = _SUPPORTED_DTYPES[dtype_tag]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if end - start != count * dtype.itemsize:
            raise TensorFileError(f"{path}: tensor '{name}' offsets disagree with shape")
        if start < 0 or end > len(buffer):
            raise TensorFileError(f"{path}: tensor '{name}' payload truncated")
        data = np.frombuffer(buffer[start:end], dtype=dtype).reshape(shape).copy()
        tensors[name] = data
    return tensors, metadata


def write_tensors(path: str | Path, tensors: Mapping[str, np.ndarray],
                  metadata: Mapping[str, str] | None = None) -> Path:
    """Write float32 tensors in canonical (lexicographic, compact) form."""
    path = Path(path)
    names = sorted(tensors)
    if not names:
        raise TensorFileError("cannot write an empty tensor file")
    header: dict[str, object] = {}
    if metadata:
        header["__metadata__"] = {str(k): str(v) for k, v in sorted(metadata.items())}
    chunks = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = arr.tobytes()
        header[name] = {
            "dtype": "F32",
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        chunks.append(raw)
        offset += len(raw)
    header_raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(struct.pack("<Q", len(header_raw)))
        fh.write(header_raw)
        for raw in chunks:
            fh.write(raw)
    return path


def read_layout_entries(path: str | Path) -> list[tuple[str, tuple[int, ...], int, int]]:
    """Header-only scan: (name, shape, absolute start, absolute end) per tensor.

    Entries are returned in lexicographic name order with offsets relative
    to the start of the file, for streamed (out-of-core) reads.
    """
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(_HEADER_LEN_BYTES)
        if len(head) < _HEADER_LEN_BYTES:
            raise TensorFileError(f"{path}: file too short for header length")
        (header_len,) = struct.unpack("<Q", head)
        raw = fh.read(header_len)
        if len(raw) < header_len:
            raise TensorFileError(f"{path}: truncated header")
    header, _ = _parse_header(raw, path)
    base = _HEADER_LEN_BYTES + header_len
    entries = []
    for name in sorted(header):
        entry = header[name]
        if entry.get("dtype") not in _SUPPORTED_DTYPES:
            raise TensorFileError(
                f"{path}: tensor '{name}' has unsupported dtype {entry.get('dtype')!r} (only F32 accepted)"
            )
        start, end = entry["data_offsets"]
        entries.append((name, tuple(int(d) for d in entry["shape"]), base + start, base + end))
    return entries
