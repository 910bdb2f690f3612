"""HTTP service exposing training, evaluation, inspection, and live tracking.

Jobs run in background threads and are polled by id. A tracking session
holds a restored system in memory; frames streamed to it come back as
bounding boxes, the same loop the CLI and the robot-style clients use.
"""

from __future__ import annotations

import base64
import io
import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image

from .. import __version__
from ..checkpoint import load_system, verify_checkpoint
from ..errors import PvmError
from ..executor import Executor
from ..runs import run_eval_job, run_train_job
from ..tracker import track_frame
from .jobs import JobRegistry
from .schemas import (BoxModel, EvalRequest, HealthResponse, InspectRequest,
                      JobStatusResponse, JobSubmitResponse,
                      SessionCreateRequest, SessionCreateResponse,
                      TrackRequest, TrackResponse, TrainRequest)


class TrackSession:
    def __init__(self, executor: Executor, settle_steps: int):
        self.executor = executor
        self.settle_steps = settle_steps
        self.lock = threading.Lock()
        self.frames_seen = 0


def _decode_frame(req: TrackRequest, width: int, height: int) -> np.ndarray:
    if (req.frame_b64 is None) == (req.pixels is None):
        raise HTTPException(400, "provide exactly one of frame_b64 or pixels")
    if req.frame_b64 is not None:
        try:
            img = Image.open(io.BytesIO(base64.b64decode(req.frame_b64)))
            img = img.convert("RGB")
        except Exception as e:
            raise HTTPException(400, f"cannot decode frame image: {e}")
        if img.size != (width, height):
            img = img.resize((width, height), Image.BILINEAR)
        return np.asarray(img, dtype=np.float64) / 255.0
    arr = np.asarray(req.pixels, dtype=np.float64)
    if arr.shape != (height, width, 3):
        raise HTTPException(400, f"pixels must be shaped {(height, width, 3)}, "
                                 f"got {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise HTTPException(400, "pixel values must lie in [0, 1]")
    return arr


def create_app() -> FastAPI:
    app = FastAPI(title="pvm", version=__version__)
    registry = JobRegistry()
    sessions: dict[str, TrackSession] = {}
    sessions_lock = threading.Lock()

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/inspect")
    def inspect(req: InspectRequest):
        try:
            return verify_checkpoint(req.checkpoint)
        except PvmError as e:
            raise HTTPException(400, str(e))

    @app.post("/jobs/train", response_model=JobSubmitResponse)
    def submit_train(req: TrainRequest):
        def work(set_progress):
            def cb(step, row):
                set_progress({"step": step, "total": req.steps, **row})
            return run_train_job(
                config_path=req.config_path, data=req.data, out_dir=req.out_dir,
                steps=req.steps, regime=req.regime,
                from_checkpoint=req.from_checkpoint, readout_lr=req.readout_lr,
                workers=req.workers, seed=req.seed,
                checkpoint_every=req.checkpoint_every,
                reset_readout=req.reset_readout, log_every=req.log_every,
                progress_cb=cb)
        return JobSubmitResponse(job_id=registry.submit("train", work))

    @app.post("/jobs/eval", response_model=JobSubmitResponse)
    def submit_eval(req: EvalRequest):
        def work(set_progress):
            return run_eval_job(
                checkpoint=req.checkpoint, data=req.data, out_dir=req.out_dir,
                settle=req.settle, baselines=req.baselines,
                workers=req.workers, dump_heatmaps=req.dump_heatmaps,
                progress_cb=set_progress)
        return JobSubmitResponse(job_id=registry.submit("eval", work))

    @app.get("/jobs/{job_id}", response_model=JobStatusResponse)
    def job_status(job_id: str):
        job = registry.get(job_id)
        if job is None:
            raise HTTPException(404, f"no job {job_id}")
        return JobStatusResponse(job_id=job.job_id, kind=job.kind,
                                 state=job.state, progress=job.progress,
                                 result=job.result, error=job.error)

    @app.get("/jobs")
    def job_list():
        return [{"job_id": j.job_id, "kind": j.kind, "state": j.state}
                for j in registry.list()]

    @app.post("/sessions", response_model=SessionCreateResponse)
    def create_session(req: SessionCreateRequest):
        try:
            system, _ = load_system(req.checkpoint)
        except PvmError as e:
            raise HTTPException(400, str(e))
        executor = Executor(system, workers=req.workers)
        executor.start()
        settle = req.settle_steps or system.config.settle_steps
        sid = uuid.uuid4().hex[:12]
        with sessions_lock:
            sessions[sid] = TrackSession(executor, settle)
        return SessionCreateResponse(
            session_id=sid, config_name=system.config.name,
            frame_width=system.config.frame_width,
            frame_height=system.config.frame_height,
            settle_steps=settle, step=system.step_index)

    @app.post("/sessions/{sid}/track", response_model=TrackResponse)
    def track(sid: str, req: TrackRequest):
        with sessions_lock:
            session = sessions.get(sid)
        if session is None:
            raise HTTPException(404, f"no session {sid}")
        cfg = session.executor.system.config
        frame = _decode_frame(req, cfg.frame_width, cfg.frame_height)
        with session.lock:
            result = track_frame(session.executor, frame, session.settle_steps)
            result.frame_index = session.frames_seen
            session.frames_seen += 1
        b = result.box
        return TrackResponse(
            frame_index=result.frame_index,
            box=BoxModel(x=b.x, y=b.y, w=b.w, h=b.h, present=b.present),
            peak=result.peak, median=result.median)

    @app.delete("/sessions/{sid}")
    def delete_session(sid: str):
        with sessions_lock:
            session = sessions.pop(sid, None)
        if session is None:
            raise HTTPException(404, f"no session {sid}")
        session.executor.close()
        return {"deleted": sid}

    return app
