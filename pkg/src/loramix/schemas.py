"""Pydantic request/response models shared by the service and the CLI."""

from __future__ import annotations

from typing import Literal, Union

from pydantic import BaseModel, Field

MetricName = Literal["wd", "kl", "js", "mmd"]
MethodName = Literal["attentional", "normalized", "neural"]


class MetricOptions(BaseModel):
    metric: MetricName = "js"
    sigma: Union[float, Literal["median"]] = "median"
    epsilon: float = Field(default=1e-10, ge=0.0)


class NeuralOptions(BaseModel):
    hidden_dim: int = Field(default=32, ge=1)
    epochs: int = Field(default=200, ge=1)
    learning_rate: float = Field(default=0.05, ge=0.0)
    gradient_clip: float | None = 1.0
    no_train: bool = False
    checkpoint_path: str | None = None


class DistancesRequest(MetricOptions):
    bank_dir: str
    workers: int = Field(default=1, ge=1)
    seed: int = 0
    cache_dir: str | None = None
    vocab_size: int | None = None


class DistancesResponse(BaseModel):
    cache_path: str
    ids: list[str]
    pair_evaluations: int           # evaluations performed by this invocation
    stored_pair_evaluations: int    # counter recorded inside the cache file
    cached: bool
    wall_time_s: float
    warning: str | None = None


class CoefficientsRequest(DistancesRequest, NeuralOptions):
    method: MethodName = "normalized"
    output_path: str


class CoefficientsResponse(BaseModel):
    json_path: str
    csv_path: str
    method: MethodName
    metric: MetricName
    checkpoint_path: str | None = None
    trained: bool = False
    wall_time_s: float


class PredictRequest(BaseModel):
    bank_dir: str
    coefficients_path: str
    query_id: str
    output_path: str


class PredictResponse(BaseModel):
    adapter_path: str
    tensor_count: int
    total_params: int
    wall_time_s: float


class HeatmapRequest(BaseModel):
    coefficients_path: str
    output_path: str


class HeatmapResponse(BaseModel):
    image_path: str
    width: int
    height: int


class PipelineRequest(MetricOptions, NeuralOptions):
    bank_dir: str
    query_path: str | None = None
    query_id: str | None = None
    method: MethodName = "normalized"
    workers: int = Field(default=1, ge=1)
    seed: int = 0
    cache_dir: str | None = None
    vocab_size: int | None = None
    output_path: str


class PipelineReport(BaseModel):
    stages: dict[str, float]        # wall seconds: gather/preprocess/distances/coefficients/predict
    pair_evaluations: int
    metric: MetricName
    method: MethodName
    query_id: str
    bank_ids: list[str]
    coefficients: list[float]


class PipelineResponse(BaseModel):
    adapter_path: str
    report: PipelineReport


class ScoreRequest(BaseModel):
    input_path: str
    output_path: str | None = None


class MeanStd(BaseModel):
    mean: float
    std: float


class ScoreResponse(BaseModel):
    rouge_l: MeanStd
    exact_match: MeanStd
    n: int
    output_path: str | None = None


class ErrorInfo(BaseModel):
    type: str
    message: str
    stage: str | None = None


class ErrorResponse(BaseModel):
    error: ErrorInfo


class HealthResponse(BaseModel):
    status: str
    version: str
