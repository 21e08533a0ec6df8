"""FastAPI service wrapping the pipeline operations.

Endpoints mirror the CLI subcommands one-to-one and operate on
server-local paths; responses carry artifact paths and run metadata, never
adapter payloads.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__, pipeline
from .errors import LoramixError, PipelineStageError
from .schemas import (
    CoefficientsRequest,
    CoefficientsResponse,
    DistancesRequest,
    DistancesResponse,
    ErrorInfo,
    ErrorResponse,
    HealthResponse,
    HeatmapRequest,
    HeatmapResponse,
    PipelineRequest,
    PipelineResponse,
    PredictRequest,
    PredictResponse,
    ScoreRequest,
    ScoreResponse,
)

app = FastAPI(title="loramix", version=__version__)


def _error_payload(exc: Exception) -> dict:
    info = ErrorInfo(
        type=type(exc).__name__,
        message=str(exc),
        stage=exc.stage if isinstance(exc, PipelineStageError) else None,
    )
    return ErrorResponse(error=info).model_dump()


@app.exception_handler(LoramixError)
async def loramix_error_handler(_request: Request, exc: LoramixError):
    return JSONResponse(status_code=400, content=_error_payload(exc))


@app.exception_handler(ValueError)
async def value_error_handler(_request: Request, exc: ValueError):
    return JSONResponse(status_code=400, content=_error_payload(exc))


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/distances", response_model=DistancesResponse)
def distances(req: DistancesRequest) -> DistancesResponse:
    return pipeline.run_distances(req)


@app.post("/coefficients", response_model=CoefficientsResponse)
def coefficients(req: CoefficientsRequest) -> CoefficientsResponse:
    return pipeline.run_coefficients(req)


@app.post("/predict", response_model=PredictResponse)
def predict(req: PredictRequest) -> PredictResponse:
    return pipeline.run_predict(req)


@app.post("/heatmap", response_model=HeatmapResponse)
def heatmap(req: HeatmapRequest) -> HeatmapResponse:
    return pipeline.run_heatmap(req)


@app.post("/pipeline", response_model=PipelineResponse)
def full_pipeline(req: PipelineRequest) -> PipelineResponse:
    return pipeline.run_pipeline(req)


@app.post("/score", response_model=ScoreResponse)
def score(req: ScoreRequest) -> ScoreResponse:
    return pipeline.run_score(req)
