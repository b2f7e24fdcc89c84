"""FastAPI wrapper around the classifier: one-shot and streaming endpoints.

The service loads one model at startup and answers classification requests
with the same featurize-and-predict path the offline tools use, so a
probability computed here is bit-identical to one computed locally from the
same payload. `/v1/classify/stream` speaks newline-delimited JSON: requests
go in one per line, responses come back one per line in the same order; a
bad line yields an error record and the stream keeps going.
"""

import hashlib
import json
import os
import time

from fastapi import FastAPI, Request
from fastapi.responses import StreamingResponse

from ..features import FeatureConfig, featurize_reading
from ..forest import ForestModel, load_model, model_to_bytes, predict_proba
from ..wire import frame_from_dict
from .schemas import ErrorRecord, ServeRequest, ServeResponse

ENV_ADDR = "TOFGRASP_ADDR"
ENV_THRESHOLD = "TOFGRASP_THRESHOLD"
DEFAULT_ADDR = "127.0.0.1:8787"
DEFAULT_THRESHOLD = 0.6
MAX_RECORD_BYTES = 1 << 20


def default_addr() -> str:
    return os.environ.get(ENV_ADDR, DEFAULT_ADDR)


def default_threshold() -> float:
    return float(os.environ.get(ENV_THRESHOLD, DEFAULT_THRESHOLD))


def model_digest(model: ForestModel) -> str:
    return hashlib.sha256(model_to_bytes(model)).hexdigest()[:16]


def classify(model: ForestModel, request: ServeRequest, threshold: float,
             digest: str, cfg: FeatureConfig = FeatureConfig()) -> ServeResponse:
    """One classification cycle; also the local path behind `classify` CLI."""
    start = time.perf_counter()
    features = featurize_reading(
        request.joint_angles,
        frame_from_dict(request.frame_left.model_dump()),
        frame_from_dict(request.frame_right.model_dump()),
        cfg)
    p = predict_proba(model, features)
    thr = threshold if request.threshold is None else request.threshold
    return ServeResponse(
        p_success=p, predicted=p >= thr, threshold=thr, model_hash=digest,
        processing_latency_ms=(time.perf_counter() - start) * 1e3,
        request_id=request.request_id)


def create_app(model, threshold: float | None = None) -> FastAPI:
    """Build the service around `model` (a ForestModel or a model file path)."""
    if not isinstance(model, ForestModel):
        model = load_model(model)
    threshold = default_threshold() if threshold is None else float(threshold)
    digest = model_digest(model)
    cfg = FeatureConfig()
    if model.n_features != cfg.width():
        raise ValueError(
            f"service wants a single-reading model ({cfg.width()} features), "
            f"got {model.n_features}")

    app = FastAPI(title="tofgrasp")

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "model_hash": digest, "threshold": threshold}

    @app.get("/v1/model")
    def model_info():
        return {"hash": digest, "layout": model.layout,
                "n_features": model.n_features,
                "hyperparams": model.hyperparams.to_dict()}

    @app.post("/v1/classify", response_model=ServeResponse)
    def classify_one(request: ServeRequest) -> ServeResponse:
        return classify(model, request, threshold, digest, cfg)

    @app.post("/v1/classify/stream")
    async def classify_stream(request: Request) -> StreamingResponse:
        async def respond():
            async for line in _records(request):
                yield _serve_line(model, line, threshold, digest, cfg)

        return StreamingResponse(respond(), media_type="application/x-ndjson")

    return app


async def _records(request: Request):
    """Split the request body into newline-delimited records as it arrives.

    A record that outgrows the 1 MiB cap is truncated to a sentinel — the
    rest of its bytes are discarded up to the next newline and the stream
    continues with the following record.
    """
    buffer = b""
    overflow = False
    async for chunk in request.stream():
        buffer += chunk
        while True:
            head, sep, tail = buffer.partition(b"\n")
            if sep:
                buffer = tail
                too_big = overflow or len(head) > MAX_RECORD_BYTES
                yield _OVERSIZED if too_big else head
                overflow = False
            else:
                if len(buffer) > MAX_RECORD_BYTES:
                    overflow = True
                    buffer = b""
                break
    if overflow:
        yield _OVERSIZED
    elif buffer.strip():
        yield buffer


_OVERSIZED = object()


def _serve_line(model, line, threshold, digest, cfg) -> str:
    if line is _OVERSIZED:
        record = ErrorRecord(error=f"record exceeds {MAX_RECORD_BYTES} bytes")
    else:
        if not line.strip():
            return "\n"  # blank keep-alive line, echoed
        request_id = None
        try:
            doc = json.loads(line)
            if isinstance(doc, dict):
                rid = doc.get("request_id")
                request_id = rid if isinstance(rid, str) else None
            record = classify(model, ServeRequest.model_validate(doc),
                              threshold, digest, cfg)
        except Exception as exc:  # malformed record: report, keep serving
            record = ErrorRecord(error=str(exc)[:500], request_id=request_id)
    return record.model_dump_json() + "\n"
