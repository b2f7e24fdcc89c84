"""Latency-bounded classification service (FastAPI)."""

from .app import (
    DEFAULT_ADDR,
    DEFAULT_THRESHOLD,
    ENV_ADDR,
    ENV_THRESHOLD,
    MAX_RECORD_BYTES,
    classify,
    create_app,
    default_addr,
    default_threshold,
    model_digest,
)
from .schemas import ErrorRecord, Frame, ServeRequest, ServeResponse
