"""Request and response models for the HTTP API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class TrainRequest(BaseModel):
    out_dir: str
    steps: int = Field(gt=0)
    config_path: str | None = None
    data: list[str] = []
    regime: str = "joint"
    from_checkpoint: str | None = None
    readout_lr: float | None = None
    workers: int = Field(default=1, ge=1)
    seed: int | None = None
    checkpoint_every: int = Field(default=0, ge=0)
    reset_readout: bool = True
    log_every: int = Field(default=1000, gt=0)


class EvalRequest(BaseModel):
    checkpoint: str
    out_dir: str
    data: list[str] = []
    settle: int | None = Field(default=None, ge=1)
    baselines: list[str] = []
    workers: int = Field(default=1, ge=1)
    dump_heatmaps: bool = False


class JobSubmitResponse(BaseModel):
    job_id: str


class JobStatusResponse(BaseModel):
    job_id: str
    kind: str
    state: str
    progress: dict = {}
    result: dict | None = None
    error: str | None = None


class InspectRequest(BaseModel):
    checkpoint: str


class SessionCreateRequest(BaseModel):
    checkpoint: str
    settle_steps: int | None = Field(default=None, ge=1)
    workers: int = Field(default=1, ge=1)


class SessionCreateResponse(BaseModel):
    session_id: str
    config_name: str
    frame_width: int
    frame_height: int
    settle_steps: int
    step: int


class BoxModel(BaseModel):
    x: float
    y: float
    w: float
    h: float
    present: bool


class TrackRequest(BaseModel):
    """One frame, either base64-encoded image bytes or a nested pixel list
    shaped (height, width, 3) with values in [0, 1]."""

    frame_b64: str | None = None
    pixels: list | None = None


class TrackResponse(BaseModel):
    frame_index: int
    box: BoxModel
    peak: float
    median: float
