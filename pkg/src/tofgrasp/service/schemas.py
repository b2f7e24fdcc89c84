"""Request/response models for the classification service.

The frame payload mirrors the NDJSON trial schema in `wire`, so a frame
dumped there can be posted here unchanged.
"""

from pydantic import BaseModel, Field


class Target(BaseModel):
    distance_m: float
    std_dev_m: float
    reflectance: float
    signal: float
    status: int = 0


class Zone(BaseModel):
    targets: list[Target]
    num_targets: int = Field(ge=0)
    spad_count: int = Field(ge=0)
    quality: str
    ambient: float


class Frame(BaseModel):
    sensor_id: str
    timestamp_s: float = 0.0
    zones: list[Zone] = Field(min_length=64, max_length=64)


class ServeRequest(BaseModel):
    joint_angles: list[float] = Field(min_length=4, max_length=4)
    frame_left: Frame
    frame_right: Frame
    request_id: str | None = None
    threshold: float | None = Field(default=None, ge=0.0, le=1.0)


class ServeResponse(BaseModel):
    p_success: float = Field(ge=0.0, le=1.0)
    predicted: bool
    threshold: float
    model_hash: str
    processing_latency_ms: float
    request_id: str | None = None


class ErrorRecord(BaseModel):
    """Emitted on the stream for a record that could not be served."""

    error: str
    request_id: str | None = None
