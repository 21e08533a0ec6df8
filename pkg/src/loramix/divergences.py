"""Dataset divergences, alignment vectors, and the pairwise distance matrix.

Four metrics are supported on empirical token distributions:

* ``wd``  — 1-D Wasserstein-1 over token ids, computed exactly from the
  raw token samples via the merged-CDF formula (token-id units).
* ``kl``  — Kullback-Leibler divergence KL(query || bank) on the smoothed
  unigram distributions.
* ``js``  — Jensen-Shannon divergence, symmetric, bounded by ln 2.
* ``mmd`` — squared Maximum Mean Discrepancy with a Gaussian kernel on
  token-id samples (subsampled to a fixed cap for tractability).

The pairwise matrix applies three cost optimizations: symmetric metrics
evaluate only the upper triangle and mirror it, per-dataset distributions
are computed once and reused, and independent cells are distributed over a
thread pool.  Results are bit-identical regardless of worker count.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EmpiricalTokenDistribution, TokenizedDataset, subsample_tokens, to_empirical_distribution
from .errors import (
    CacheFormatError,
    CacheVersionError,
    DegenerateBandwidthError,
    DuplicateIdError,
    VocabMismatchError,
)

#: Sentinel stored at masked matrix entries (self-distances).  Downstream
#: coefficient computations assign masked entries weight exactly 0.
SENTINEL = float(np.finfo(np.float64).max)

#: Per-dataset token-sample cap for MMD; bounds the quadratic kernel cost.
MMD_SAMPLE_CAP = 2048

#: Pooled-sample cap for median-heuristic bandwidth selection.
BANDWIDTH_SAMPLE_CAP = 2048

METRIC_TAGS = ("wd", "kl", "js", "mmd")
SYMMETRIC_METRICS = frozenset({"wd", "js", "mmd"})

_MATRIX_MAGIC = b"LMFD"
_MATRIX_VERSION = 1
_MEDIAN_SIGMA_CODE = -1.0


@dataclass(frozen=True)
class MetricKind:
    """A divergence choice plus its parameters.

    ``sigma`` is the Gaussian kernel bandwidth (MMD only); the string
    ``"median"`` selects the per-pair median heuristic.  ``epsilon`` is the
    additive smoothing applied to distributions for KL/JS.
    """

    kind: str
    sigma: float | str = "median"
    epsilon: float = 1e-10

    def __post_init__(self):
        if self.kind not in METRIC_TAGS:
            raise ValueError(f"unknown metric {self.kind!r}; expected one of {METRIC_TAGS}")
        if isinstance(self.sigma, str):
            if self.sigma != "median":
                raise ValueError(f"sigma must be a positive number or 'median', got {self.sigma!r}")
        elif self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")

    @property
    def symmetric(self) -> bool:
        return self.kind in SYMMETRIC_METRICS


@dataclass(frozen=True)
class AlignmentVector:
    """Divergences from one query dataset to every bank dataset, in bank order."""

    query_id: str
    bank_ids: tuple[str, ...]
    values: np.ndarray
    masked: frozenset[int]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(self.bank_ids),):
            raise ValueError("values length must match bank_ids")
        masked = frozenset(self.masked)
        for k in masked:
            if values[k] != SENTINEL:
                raise ValueError(f"masked index {k} must carry the sentinel value")
        unmasked = [v for k, v in enumerate(values) if k not in masked]
        if unmasked and (not np.all(np.isfinite(unmasked)) or min(unmasked) < 0):
            raise ValueError("unmasked alignment values must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "masked", masked)
        object.__setattr__(self, "bank_ids", tuple(self.bank_ids))


@dataclass
class DistanceMatrix:
    """N x N divergence values with mask convention and instrumentation.

    ``pair_evaluations`` counts scalar divergence evaluations performed to
    build the matrix (mirrored symmetric entries are not recomputed).
    """

    metric: MetricKind
    ids: tuple[str, ...]
    values: np.ndarray
    self_masked: bool
    pair_evaluations: int

    def __post_init__(self):
        self.ids = tuple(self.ids)
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise DuplicateIdError("distance matrix ids must be unique")
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (n, n):
            raise ValueError(f"values must be {n}x{n}")
        if self.self_masked and not np.all(np.diag(values) == SENTINEL):
            raise ValueError("self-masked matrix must carry the sentinel on its diagonal")
        self.values = values

    @property
    def size(self) -> int:
        return len(self.ids)

    def row_alignment(self, i: int) -> AlignmentVector:
        """Row ``i`` as an alignment vector (self-distance masked when present)."""
        row = self.values[i]
        masked = frozenset(int(j) for j in np.nonzero(row == SENTINEL)[0])
        return AlignmentVector(self.ids[i], self.ids, row, masked)


def _check_vocab(p: EmpiricalTokenDistribution, q: EmpiricalTokenDistribution) -> None:
    if p.vocab_size != q.vocab_size:
        raise VocabMismatchError(f"vocab mismatch: {p.vocab_size} != {q.vocab_size}")


def wasserstein1(p: EmpiricalTokenDistribution, q: EmpiricalTokenDistribution) -> float:
    """1-D Wasserstein-1 distance between the two token samples.

    Computed exactly on the integer line as the integral of |CDF_p - CDF_q|
    over the merged sample values; equals the LP optimal-transport cost.
    """
    _check_vocab(p, q)
    xs = p.token_sample
    ys = q.token_sample
    if xs.size == 0 or ys.size == 0:
        raise ValueError("wasserstein1 requires non-empty token samples")
    xs = np.sort(xs)
    ys = np.sort(ys)
    merged = np.sort(np.concatenate([xs, ys]))
    deltas = np.diff(merged).astype(np.float64)
    if not deltas.any():
        return 0.0
    cdf_x = np.searchsorted(xs, merged[:-1], side="right") / xs.size
    cdf_y = np.searchsorted(ys, merged[:-1], side="right") / ys.size
    return float(np.sum(np.abs(cdf_x - cdf_y) * deltas))


def kl(p: EmpiricalTokenDistribution, q: EmpiricalTokenDistribution) -> float:
    """KL(p || q) over the vocabulary, with the 0 * ln(0/q) = 0 convention."""
    _check_vocab(p, q)
    pv, qv = p.probs, q.probs
    support = pv > 0
    if np.any(support & (qv == 0)):
        raise ValueError(
            "KL undefined: q has zero mass on p's support (smooth q with epsilon > 0)"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(support, pv * (np.log(pv) - np.log(qv)), 0.0)
    return max(float(terms.sum()), 0.0)


def js(p: EmpiricalTokenDistribution, q: EmpiricalTokenDistribution) -> float:
    """Jensen-Shannon divergence: 0.5*KL(p||m) + 0.5*KL(q||m), m = (p+q)/2."""
    _check_vocab(p, q)
    pv, qv = p.probs, q.probs
    m = 0.5 * (pv + qv)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_m = np.log(m)
        t_p = np.where(pv > 0, pv * (np.log(pv) - log_m), 0.0).sum()
        t_q = np.where(qv > 0, qv * (np.log(qv) - log_m), 0.0).sum()
    return max(0.5 * float(t_p + t_q), 0.0)


def mmd2_gaussian(xs: np.ndarray, ys: np.ndarray, sigma: float) -> float:
    """Squared MMD with Gaussian kernel, V-statistic form, clamped at zero.

    mean k(x,x') - 2 mean k(x,y) + mean k(y,y') over all pairs including
    the diagonal, in double precision.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size == 0 or ys.size == 0:
        raise ValueError("mmd2_gaussian requires non-empty samples")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    gamma = 1.0 / (2.0 * sigma * sigma)
    k_xx = np.exp(-gamma * np.square(xs[:, None] - xs[None, :])).mean()
    k_yy = np.exp(-gamma * np.square(ys[:, None] - ys[None, :])).mean()
    k_xy = np.exp(-gamma * np.square(xs[:, None] - ys[None, :])).mean()
    return max(float(k_xx - 2.0 * k_xy + k_yy), 0.0)


def median_bandwidth(xs: np.ndarray, ys: np.ndarray) -> float:
    """Median of pairwise absolute differences over the pooled sample.

    The pooled sample is capped at BANDWIDTH_SAMPLE_CAP points by an even
    stride over its sorted values (deterministic).  When the median itself
    collapses to zero while distinct values remain, the smallest nonzero
    gap is used so the result stays positive.
    """
    pooled = np.sort(np.concatenate([np.asarray(xs), np.asarray(ys)]).astype(np.float64))
    if pooled.size > BANDWIDTH_SAMPLE_CAP:
        idx = np.linspace(0, pooled.size - 1, BANDWIDTH_SAMPLE_CAP).round().astype(np.int64)
        pooled = pooled[idx]
    if pooled.size < 2 or pooled[0] == pooled[-1]:
        raise DegenerateBandwidthError("degenerate bandwidth: all pooled points identical")
    diffs = np.abs(pooled[:, None] - pooled[None, :])
    upper = diffs[np.triu_indices(pooled.size, k=1)]
    med = float(np.median(upper))
    if med == 0.0:
        med = float(upper[upper > 0].min())
    return med


def _dataset_seed(seed: int, dataset_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{dataset_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def prepare_distribution(ds: TokenizedDataset, metric: MetricKind, seed: int = 0) -> EmpiricalTokenDistribution:
    """Build the per-dataset distribution a metric needs, once.

    KL/JS get the epsilon-smoothed unigram vector; WD keeps the raw sample;
    MMD gets a seed-deterministic subsample capped at MMD_SAMPLE_CAP.
    """
    if metric.kind in ("kl", "js"):
        return to_empirical_distribution(ds, metric.epsilon)
    dist = to_empirical_distribution(ds, 0.0)
    if metric.kind == "mmd":
        sample = subsample_tokens(ds, MMD_SAMPLE_CAP, _dataset_seed(seed, ds.dataset_id))
        dist = dist.with_sample(sample)
    return dist


def evaluate_metric(metric: MetricKind, p: EmpiricalTokenDistribution,
                    q: EmpiricalTokenDistribution) -> float:
    """Scalar divergence dispatch on prepared distributions."""
    if metric.kind == "wd":
        return wasserstein1(p, q)
    if metric.kind == "kl":
        return kl(p, q)
    if metric.kind == "js":
        return js(p, q)
    sigma = metric.sigma
    if sigma == "median":
        sigma = median_bandwidth(p.token_sample, q.token_sample)
    return mmd2_gaussian(p.token_sample, q.token_sample, float(sigma))


def alignment_vector(query: TokenizedDataset, bank: Sequence[TokenizedDataset],
                     metric: MetricKind, seed: int = 0) -> AlignmentVector:
    """Divergences from ``query`` to every bank dataset, self-distance masked.

    An index is masked (sentinel value, weight 0 downstream) when the bank
    dataset's id equals the query's id.
    """
    if not bank:
        raise ValueError("bank must be non-empty")
    bank_ids = [ds.dataset_id for ds in bank]
    if len(set(bank_ids)) != len(bank_ids):
        raise DuplicateIdError("bank dataset ids must be unique")
    for ds in bank:
        if ds.vocab_size != query.vocab_size:
            raise VocabMismatchError(
                f"bank dataset '{ds.dataset_id}' vocab {ds.vocab_size} != query vocab {query.vocab_size}"
            )
    q_dist = prepare_distribution(query, metric, seed)
    values = np.empty(len(bank), dtype=np.float64)
    masked = set()
    for k, ds in enumerate(bank):
        if ds.dataset_id == query.dataset_id:
            values[k] = SENTINEL
            masked.add(k)
            continue
        values[k] = evaluate_metric(metric, q_dist, prepare_distribution(ds, metric, seed))
    return AlignmentVector(query.dataset_id, tuple(bank_ids), values, frozenset(masked))


def pairwise_distance_matrix(bank: Sequence[TokenizedDataset], metric: MetricKind,
                             workers: int = 1, seed: int = 0) -> DistanceMatrix:
    """Full pairwise matrix over a bank with the diagonal self-masked.

    Symmetric metrics evaluate exactly N(N-1)/2 pairs and mirror them; KL
    evaluates both directions (N(N-1) evaluations).  The result is a pure
    function of (bank, metric, seed), independent of ``workers``.
    """
    if len(bank) < 2:
        raise ValueError("pairwise_distance_matrix needs at least 2 datasets")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    ids = [ds.dataset_id for ds in bank]
    if len(set(ids)) != len(ids):
        raise DuplicateIdError("bank dataset ids must be unique")
    vocab = bank[0].vocab_size
    for ds in bank:
        if ds.vocab_size != vocab:
            raise VocabMismatchError(f"dataset '{ds.dataset_id}' vocab {ds.vocab_size} != {vocab}")

    dists = [prepare_distribution(ds, metric, seed) for ds in bank]
    n = len(bank)
    values = np.zeros((n, n), dtype=np.float64)
    np.fill_diagonal(values, SENTINEL)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    symmetric = metric.symmetric

    def run_chunk(chunk: list[tuple[int, int]]) -> list[tuple[int, int, float, float | None]]:
        out = []
        for i, j in chunk:
            d_ij = evaluate_metric(metric, dists[i], dists[j])
            d_ji = None if symmetric else evaluate_metric(metric, dists[j], dists[i])
            out.append((i, j, d_ij, d_ji))
        return out

    if workers == 1 or len(pairs) <= 1:
        results = run_chunk(pairs)
    else:
        n_chunks = min(len(pairs), workers * 8)
        chunks = [list(c) for c in np.array_split(np.array(pairs, dtype=np.int64), n_chunks) if len(c)]
        chunks = [[(int(i), int(j)) for i, j in c] for c in chunks]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = [item for part in pool.map(run_chunk, chunks) for item in part]

    evaluations = 0
    for i, j, d_ij, d_ji in results:
        values[i, j] = d_ij
        values[j, i] = d_ij if symmetric else d_ji
        evaluations += 1 if symmetric else 2
    return DistanceMatrix(metric, tuple(ids), values, self_masked=True, pair_evaluations=evaluations)


def _encode_sigma(sigma: float | str) -> float:
    return _MEDIAN_SIGMA_CODE if sigma == "median" else float(sigma)


def _decode_sigma(code: float) -> float | str:
    return "median" if code == _MEDIAN_SIGMA_CODE else code


def save_matrix(m: DistanceMatrix, path: str | Path) -> Path:
    """Write the binary cache format; round-trips bit-exactly via load_matrix.

    Layout: magic "LMFD", then a CRC32-protected payload of
    version:u16, metric tag:u8, flags:u8 (bit0 self_masked),
    pair_evaluations:u64, sigma:f64 (-1 encodes "median"), epsilon:f64,
    N:u32, N length-prefixed UTF-8 ids, N*N little-endian f64 row-major,
    then CRC32:u32 of the payload.  All integers little-endian.
    """
    path = Path(path)
    parts = [struct.pack("<HBB", _MATRIX_VERSION, METRIC_TAGS.index(m.metric.kind),
                         1 if m.self_masked else 0),
             struct.pack("<Qdd", m.pair_evaluations, _encode_sigma(m.metric.sigma),
                         m.metric.epsilon),
             struct.pack("<I", len(m.ids))]
    for ident in m.ids:
        raw = ident.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(m.values, dtype="<f8").tobytes())
    payload = b"".join(parts)
    blob = _MATRIX_MAGIC + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    return path


def load_matrix(path: str | Path) -> DistanceMatrix:
    """Read a matrix cache file, verifying checksum before any field is trusted."""
    blob = Path(path).read_bytes()
    if len(blob) < len(_MATRIX_MAGIC) + 4 or blob[:4] != _MATRIX_MAGIC:
        raise CacheFormatError(f"{path}: not a distance-matrix cache (bad magic)")
    payload, crc_raw = blob[4:-4], blob[-4:]
    (crc_stored,) = struct.unpack("<I", crc_raw)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise CacheFormatError(f"{path}: checksum mismatch (truncated or corrupt)")
    version, tag, flags = struct.unpack_from("<HBB", payload, 0)
    if version != _MATRIX_VERSION:
        raise CacheVersionError(f"{path}: format version {version}, expected {_MATRIX_VERSION}")
    if tag >= len(METRIC_TAGS):
        raise CacheFormatError(f"{path}: unknown metric tag {tag}")
    off = 4
    pair_evaluations, sigma_code, epsilon = struct.unpack_from("<Qdd", payload, off)
    off += 24
    (n,) = struct.unpack_from("<I", payload, off)
    off += 4
    ids = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", payload, off)
        off += 4
        ids.append(payload[off:off + ln].decode("utf-8"))
        off += ln
    expected = n * n * 8
    body = payload[off:off + expected]
    if len(body) != expected:
        raise CacheFormatError(f"{path}: value block truncated")
    values = np.frombuffer(body, dtype="<f8").reshape(n, n).copy()
    metric = MetricKind(METRIC_TAGS[tag], sigma=_decode_sigma(sigma_code), epsilon=epsilon)
    return DistanceMatrix(metric, tuple(ids), values,
                          self_masked=bool(flags & 1), pair_evaluations=int(pair_evaluations))
