"""Thin command-line client for the pipeline operations.

Each subcommand assembles the same pydantic request the service accepts
and either executes it in-process (default) or posts it to a running
service (``--server``).  ``--config`` points at a JSON file whose keys
mirror the request fields; explicit flags override the config file.
Failures print a machine-readable error JSON on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .errors import LoramixError, PipelineStageError
from .schemas import (
    CoefficientsRequest,
    DistancesRequest,
    ErrorInfo,
    ErrorResponse,
    HeatmapRequest,
    PipelineRequest,
    PredictRequest,
    ScoreRequest,
)

_RUNNERS = {
    "distances": (DistancesRequest, pipeline.run_distances),
    "coefficients": (CoefficientsRequest, pipeline.run_coefficients),
    "predict": (PredictRequest, pipeline.run_predict),
    "heatmap": (HeatmapRequest, pipeline.run_heatmap),
    "pipeline": (PipelineRequest, pipeline.run_pipeline),
    "score": (ScoreRequest, pipeline.run_score),
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with request fields (flags override)")
    parser.add_argument("--server", help="base URL of a running service; runs in-process if omitted")


def _add_metric_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--metric", choices=["wd", "kl", "js", "mmd"])
    parser.add_argument("--sigma", help="MMD bandwidth (positive number or 'median')")
    parser.add_argument("--epsilon", type=float, help="KL/JS smoothing epsilon")


def _add_bank_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--bank-dir", dest="bank_dir")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--cache-dir", dest="cache_dir")
    parser.add_argument("--vocab-size", dest="vocab_size", type=int)


def _add_neural_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--gradient-clip", dest="gradient_clip", type=float)
    parser.add_argument("--no-train", dest="no_train", action="store_const", const=True)
    parser.add_argument("--checkpoint", dest="checkpoint_path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distances", help="compute or reuse the pairwise distance matrix cache")
    _add_common(p)
    _add_metric_flags(p)
    _add_bank_flags(p)

    p = sub.add_parser("coefficients", help="turn a cached distance matrix into mixture coefficients")
    _add_common(p)
    _add_metric_flags(p)
    _add_bank_flags(p)
    _add_neural_flags(p)
    p.add_argument("--method", choices=["attentional", "normalized", "neural"])
    p.add_argument("--output", dest="output_path")

    p = sub.add_parser("predict", help="combine bank adapters with a coefficient row")
    _add_common(p)
    p.add_argument("--bank-dir", dest="bank_dir")
    p.add_argument("--coefficients", dest="coefficients_path")
    p.add_argument("--query-id", dest="query_id")
    p.add_argument("--output", dest="output_path")

    p = sub.add_parser("heatmap", help="render a coefficient matrix as a portable graymap")
    _add_common(p)
    p.add_argument("--coefficients", dest="coefficients_path")
    p.add_argument("--output", dest="output_path")

    p = sub.add_parser("pipeline", help="run gather/preprocess/distances/coefficients/predict")
    _add_common(p)
    _add_metric_flags(p)
    _add_bank_flags(p)
    _add_neural_flags(p)
    p.add_argument("--method", choices=["attentional", "normalized", "neural"])
    p.add_argument("--query-path", dest="query_path")
    p.add_argument("--query-id", dest="query_id")
    p.add_argument("--output", dest="output_path")

    p = sub.add_parser("score", help="batch Rouge-L / Exact Match over candidate-reference pairs")
    _add_common(p)
    p.add_argument("--input", dest="input_path")
    p.add_argument("--output", dest="output_path")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _request_fields(args: argparse.Namespace) -> dict:
    skip = {"command", "config", "server"}
    fields = {k: v for k, v in vars(args).items() if k not in skip and v is not None}
    if args.config:
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(config, dict):
            raise ValueError("--config must contain a JSON object")
        merged = dict(config)
        merged.update(fields)
        fields = merged
    if "sigma" in fields and fields["sigma"] != "median":
        fields["sigma"] = float(fields["sigma"])
    return fields


def _emit_error(exc: Exception) -> None:
    info = ErrorInfo(
        type=type(exc).__name__,
        message=str(exc),
        stage=exc.stage if isinstance(exc, PipelineStageError) else None,
    )
    print(ErrorResponse(error=info).model_dump_json(indent=2), file=sys.stderr)


def _dispatch(command: str, fields: dict, server: str | None) -> int:
    model, runner = _RUNNERS[command]
    request = model(**fields)
    if server:
        import httpx

        response = httpx.post(f"{server.rstrip('/')}/{command}",
                              json=request.model_dump(mode="json"), timeout=None)
        if response.status_code != 200:
            print(response.text, file=sys.stderr)
            return 1
        print(json.dumps(response.json(), indent=2))
        return 0
    result = runner(request)
    print(result.model_dump_json(indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    try:
        fields = _request_fields(args)
        return _dispatch(args.command, fields, args.server)
    except (LoramixError, ValueError, OSError) as exc:
        _emit_error(exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
