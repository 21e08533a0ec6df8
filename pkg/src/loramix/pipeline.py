"""Pipeline operations behind the service endpoints and CLI subcommands.

A bank directory holds one ``<dataset_id>.jsonl`` token dataset per entry
and, when adapters are involved, a sibling ``<dataset_id>.safetensors``.
Distance matrices are cached under content-hash keys (dataset file bytes
plus metric parameters and seed), so unchanged inputs are never
recomputed and repeated invocations produce byte-identical artifacts.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import adapters, coefficients, corpus, divergences, mlp, textmetrics
from .errors import (
    CacheFormatError,
    CacheVersionError,
    DatasetFormatError,
    LoramixError,
    PipelineStageError,
)
from .schemas import (
    CoefficientsRequest,
    CoefficientsResponse,
    DistancesRequest,
    DistancesResponse,
    HeatmapRequest,
    HeatmapResponse,
    MeanStd,
    PipelineReport,
    PipelineRequest,
    PipelineResponse,
    PredictRequest,
    PredictResponse,
    ScoreRequest,
    ScoreResponse,
)

CACHE_DIR_ENV = "LMF_CACHE_DIR"
_KEY_FORMAT = 1


def _resolve_cache_dir(cache_dir: str | None) -> Path:
    path = Path(cache_dir or os.environ.get(CACHE_DIR_ENV) or ".lmf-cache")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _metric_of(req) -> divergences.MetricKind:
    return divergences.MetricKind(req.metric, sigma=req.sigma, epsilon=req.epsilon)


def _bank_dataset_paths(bank_dir: str | Path) -> list[Path]:
    bank_dir = Path(bank_dir)
    if not bank_dir.is_dir():
        raise DatasetFormatError(f"bank directory not found: {bank_dir}")
    paths = sorted(bank_dir.glob("*.jsonl"))
    if not paths:
        raise DatasetFormatError(f"no *.jsonl token datasets in {bank_dir}")
    return paths


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _cache_key(paths: list[Path], metric: divergences.MetricKind, seed: int) -> str:
    payload = {
        "format": _KEY_FORMAT,
        "metric": metric.kind,
        "sigma": str(metric.sigma),
        "epsilon": repr(metric.epsilon),
        "seed": seed,
        "datasets": [(p.stem, _sha256_file(p)) for p in paths],
    }
    raw = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(raw).hexdigest()[:16]


@contextmanager
def _cache_lock(cache_path: Path):
    lock_path = cache_path.with_suffix(cache_path.suffix + ".lock")
    with lock_path.open("w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _load_bank(paths: list[Path], vocab_size: int | None) -> list[corpus.TokenizedDataset]:
    return [corpus.load_token_dataset(p, vocab_size) for p in paths]


def _matrix_cache_path(req) -> tuple[Path, list[Path]]:
    metric = _metric_of(req)
    paths = _bank_dataset_paths(req.bank_dir)
    key = _cache_key(paths, metric, req.seed)
    cache_dir = _resolve_cache_dir(req.cache_dir)
    return cache_dir / f"{metric.kind}-{key}.lmfd", paths


def _obtain_matrix(req) -> tuple[divergences.DistanceMatrix, Path, int, bool, str | None]:
    """Load the cached matrix or compute and cache it.

    Returns (matrix, cache_path, evaluations_this_run, cached, warning).
    """
    metric = _metric_of(req)
    cache_path, paths = _matrix_cache_path(req)
    warning = None
    if cache_path.exists():
        try:
            matrix = divergences.load_matrix(cache_path)
            return matrix, cache_path, 0, True, None
        except CacheVersionError as exc:
            warning = f"cache version mismatch, recomputing ({exc})"
        except CacheFormatError as exc:
            warning = f"corrupt cache, recomputing ({exc})"
    bank = _load_bank(paths, req.vocab_size)
    matrix = divergences.pairwise_distance_matrix(bank, metric, workers=req.workers, seed=req.seed)
    with _cache_lock(cache_path):
        divergences.save_matrix(matrix, cache_path)
    return matrix, cache_path, matrix.pair_evaluations, False, warning


def run_distances(req: DistancesRequest) -> DistancesResponse:
    started = time.perf_counter()
    matrix, cache_path, evaluations, cached, warning = _obtain_matrix(req)
    return DistancesResponse(
        cache_path=str(cache_path),
        ids=list(matrix.ids),
        pair_evaluations=evaluations,
        stored_pair_evaluations=matrix.pair_evaluations,
        cached=cached,
        wall_time_s=time.perf_counter() - started,
        warning=warning,
    )


def _adapter_path_for(bank_dir: Path, dataset_id: str) -> Path:
    path = bank_dir / f"{dataset_id}.safetensors"
    if not path.exists():
        raise DatasetFormatError(f"missing adapter file for dataset '{dataset_id}': {path}")
    return path


def _bank_gram(bank_dir: Path, ids: tuple[str, ...]) -> adapters.GramMatrix:
    flats = [adapters.load_adapter(_adapter_path_for(bank_dir, i), adapter_id=i) for i in ids]
    return adapters.gram_matrix(adapters.validate_bank(flats))


def _train_config(req: CoefficientsRequest | PipelineRequest, seed: int) -> mlp.TrainConfig:
    return mlp.TrainConfig(
        learning_rate=req.learning_rate,
        epochs=req.epochs,
        seed=seed,
        gradient_clip=req.gradient_clip,
    )


def _neural_params(req, matrix: divergences.DistanceMatrix,
                   cache_path: Path) -> tuple[mlp.MlpParameters, Path, bool]:
    """Load the MLP checkpoint for this matrix, training it first if allowed.

    Coefficients are always computed from the float32 checkpoint as read
    back from disk, so a fresh training run and a later cache hit emit
    byte-identical artifacts.
    """
    if req.checkpoint_path:
        ckpt = Path(req.checkpoint_path)
    else:
        tag = f"h{req.hidden_dim}-e{req.epochs}-lr{req.learning_rate!r}-c{req.gradient_clip!r}-s{req.seed}"
        ckpt = cache_path.with_name(f"{cache_path.stem}-mlp-{tag}.safetensors")
    trained = False
    if not ckpt.exists():
        if req.no_train:
            raise DatasetFormatError(f"missing MLP checkpoint {ckpt} and training is disabled")
        gram = _bank_gram(Path(req.bank_dir), matrix.ids)
        cfg = _train_config(req, req.seed)
        params = mlp.train(matrix, gram, req.hidden_dim, cfg)
        mlp.save_mlp(params, ckpt, {
            "seed": req.seed, "epochs": req.epochs, "learning_rate": req.learning_rate,
        })
        trained = True
    params, _ = mlp.load_mlp(ckpt)
    return params, ckpt, trained


def run_coefficients(req: CoefficientsRequest) -> CoefficientsResponse:
    started = time.perf_counter()
    cache_path, _ = _matrix_cache_path(req)
    if not cache_path.exists():
        raise DatasetFormatError(
            f"missing distance cache {cache_path}; run the distances step first"
        )
    matrix = divergences.load_matrix(cache_path)
    checkpoint = None
    trained = False
    if req.method == "neural":
        params, ckpt, trained = _neural_params(req, matrix, cache_path)
        cm = mlp.neural_coefficient_matrix(params, matrix)
        checkpoint = str(ckpt)
    else:
        cm = coefficients.coefficient_matrix(matrix, req.method)
    json_path, csv_path = coefficients.save_coefficients(cm, matrix.metric.kind, req.output_path)
    return CoefficientsResponse(
        json_path=str(json_path),
        csv_path=str(csv_path),
        method=req.method,
        metric=matrix.metric.kind,
        checkpoint_path=checkpoint,
        trained=trained,
        wall_time_s=time.perf_counter() - started,
    )


def run_predict(req: PredictRequest) -> PredictResponse:
    started = time.perf_counter()
    cm, _method, _metric = coefficients.load_coefficients(req.coefficients_path)
    if req.query_id not in cm.ids:
        raise DatasetFormatError(
            f"query id '{req.query_id}' not among coefficient rows {list(cm.ids)[:8]}..."
        )
    row = cm.rows[cm.ids.index(req.query_id)]
    bank_dir = Path(req.bank_dir)
    paths = [_adapter_path_for(bank_dir, i) for i in row.bank_ids]
    mixture = adapters.combine_streamed(paths, row)
    adapters.save_adapter(mixture, req.output_path)
    return PredictResponse(
        adapter_path=str(req.output_path),
        tensor_count=len(mixture.layout.tensors),
        total_params=mixture.layout.total_params,
        wall_time_s=time.perf_counter() - started,
    )


def write_heatmap(weights: np.ndarray, path: str | Path) -> Path:
    """Emit a binary portable graymap; pixel = round(255 * w / row max)."""
    if weights.size == 0:
        raise ValueError("cannot render an empty coefficient matrix")
    row_max = weights.max(axis=1, keepdims=True)
    if np.any(row_max <= 0):
        raise ValueError("every coefficient row must have positive mass")
    pixels = np.floor(255.0 * weights / row_max + 0.5)
    pixels = np.clip(pixels, 0, 255).astype(np.uint8)
    height, width = pixels.shape
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return path


def run_heatmap(req: HeatmapRequest) -> HeatmapResponse:
    cm, _, _ = coefficients.load_coefficients(req.coefficients_path)
    weights = cm.to_array()
    write_heatmap(weights, req.output_path)
    return HeatmapResponse(image_path=str(req.output_path),
                           width=weights.shape[1], height=weights.shape[0])


@contextmanager
def _stage(name: str, timings: dict[str, float]):
    started = time.perf_counter()
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError(name, str(exc)) from exc
    finally:
        timings[name] = time.perf_counter() - started


def run_pipeline(req: PipelineRequest) -> PipelineResponse:
    """End-to-end: gather -> preprocess -> distances -> coefficients -> predict.

    The query is either an external dataset file (``query_path``) or a bank
    member predicted leave-one-out (``query_id``).  The first failing stage
    aborts with its stage name.
    """
    timings: dict[str, float] = {}
    metric = _metric_of(req)

    with _stage("gather", timings):
        if bool(req.query_path) == bool(req.query_id):
            raise DatasetFormatError("exactly one of query_path or query_id is required")
        dataset_paths = _bank_dataset_paths(req.bank_dir)
        query_path = Path(req.query_path) if req.query_path else None
        if query_path is not None and not query_path.exists():
            raise DatasetFormatError(f"query dataset not found: {query_path}")

    with _stage("preprocess", timings):
        bank = _load_bank(dataset_paths, req.vocab_size)
        bank_ids = tuple(ds.dataset_id for ds in bank)
        if query_path is not None:
            query = corpus.load_token_dataset(query_path, req.vocab_size or bank[0].vocab_size)
            query_id = query.dataset_id
        else:
            query = None
            query_id = req.query_id
            if query_id not in bank_ids:
                raise DatasetFormatError(f"query id '{query_id}' not found in bank")

    with _stage("distances", timings):
        matrix, cache_path, evaluations, _cached, _warning = _obtain_matrix(req)
        if query is not None:
            align = divergences.alignment_vector(query, bank, metric, seed=req.seed)
            evaluations += sum(1 for k in range(len(bank)) if k not in align.masked)
        else:
            align = matrix.row_alignment(matrix.ids.index(query_id))

    with _stage("coefficients", timings):
        if req.method == "attentional":
            vector = coefficients.attentional(align)
        elif req.method == "normalized":
            vector = coefficients.normalized(align)
        else:
            params, _ckpt, _trained = _neural_params(req, matrix, cache_path)
            vector = mlp.neural_coefficients(params, align)

    with _stage("predict", timings):
        bank_dir = Path(req.bank_dir)
        paths = [_adapter_path_for(bank_dir, i) for i in vector.bank_ids]
        mixture = adapters.combine_streamed(paths, vector)
        adapters.save_adapter(mixture, req.output_path)

    report = PipelineReport(
        stages=timings,
        pair_evaluations=evaluations,
        metric=metric.kind,
        method=req.method,
        query_id=query_id,
        bank_ids=list(vector.bank_ids),
        coefficients=[float(v) for v in vector.weights],
    )
    return PipelineResponse(adapter_path=str(req.output_path), report=report)


def run_score(req: ScoreRequest) -> ScoreResponse:
    result = textmetrics.score_pairs_file(req.input_path)
    output_path = None
    if req.output_path:
        Path(req.output_path).write_text(
            json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        output_path = str(req.output_path)
    return ScoreResponse(
        rouge_l=MeanStd(**result["rouge_l"]),
        exact_match=MeanStd(**result["exact_match"]),
        n=result["n"],
        output_path=output_path,
    )
