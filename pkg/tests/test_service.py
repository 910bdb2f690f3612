"""HTTP API: health, inspection, background jobs, and tracking sessions."""

import base64
import io
import json
import time
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from pvm import __version__
from pvm.dataset import synth_sequence
from pvm.runs import run_train_job
from pvm.service.app import create_app

from conftest import make_config

RAW = {
    "name": "svc-16",
    "frame_width": 16,
    "frame_height": 16,
    "tile_size": 4,
    "layer_grids": [[4, 4], [2, 2], [1, 1]],
    "hidden_size": 8,
    "heatmap_size": 4,
    "readout_patch_sizes": [1, 2, 4],
    "readout_canvas_sizes": [4, 4, 4],
    "settle_steps": 1,
    "seed": 2000,
    "schedule": {
        "layer_enable_steps": [0, 0, 0],
        "lateral_enable_step": 0,
        "feedback_enable_step": 0,
    },
    "synthetic": {
        "kind": "bouncing_square",
        "frames": 24,
        "square_size": 6,
        "speed": 1.5,
        "present_frames": 9,
        "absent_frames": 3,
        "seed": 42,
    },
}


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    return tmp_path_factory.mktemp("service")


@pytest.fixture(scope="module")
def config_path(workspace):
    path = workspace / "config.json"
    path.write_text(json.dumps(RAW))
    return str(path)


@pytest.fixture(scope="module")
def checkpoint(workspace, config_path):
    result = run_train_job(config_path=config_path,
                           out_dir=str(workspace / "train"), steps=200)
    return result["final_checkpoint"]


def wait_for(client, job_id, timeout=180.0):
    deadline = time.time() + timeout
    status = None
    while time.time() < deadline:
        status = client.get(f"/jobs/{job_id}").json()
        if status["state"] in ("done", "error"):
            return status
        time.sleep(0.05)
    raise AssertionError(f"job {job_id} never finished: {status}")


def synth_frame():
    """First frame of the shared synthetic sequence (byte-quantized floats)."""
    _, synth = make_config(synthetic=RAW["synthetic"])
    return synth_sequence(synth, (16, 16)).frames[0]


def png_b64(frame):
    img = Image.fromarray(np.round(frame * 255.0).astype(np.uint8), "RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def test_health(client):
    body = client.get("/health").json()
    assert body == {"status": "ok", "version": __version__}


def test_inspect_checkpoint(client, checkpoint):
    body = client.post("/inspect", json={"checkpoint": checkpoint}).json()
    assert body["step"] == 200
    assert body["config_name"] == "svc-16"
    assert body["frame_size"] == [16, 16]
    assert body["finite"] is True
    assert body["total_parameters"] > 0
    assert body["synthetic"] == "bouncing_square"


def test_inspect_missing_checkpoint_is_400(client, workspace):
    resp = client.post("/inspect", json={"checkpoint": str(workspace / "no.pvmckpt")})
    assert resp.status_code == 400


def test_train_job_lifecycle(client, config_path, workspace):
    out = workspace / "api_train"
    resp = client.post("/jobs/train", json={
        "config_path": config_path, "out_dir": str(out),
        "steps": 80, "log_every": 40})
    assert resp.status_code == 200
    job_id = resp.json()["job_id"]
    assert any(j["job_id"] == job_id for j in client.get("/jobs").json())
    status = wait_for(client, job_id)
    assert status["state"] == "done", status["error"]
    assert status["kind"] == "train"
    assert status["result"]["final_step"] == 80
    assert Path(status["result"]["final_checkpoint"]).exists()
    assert status["progress"]["step"] == 80


def test_eval_job_lifecycle(client, checkpoint, workspace):
    out = workspace / "api_eval"
    resp = client.post("/jobs/eval", json={
        "checkpoint": checkpoint, "out_dir": str(out),
        "baselines": ["null", "center"]})
    job_id = resp.json()["job_id"]
    status = wait_for(client, job_id)
    assert status["state"] == "done", status["error"]
    overall = status["result"]["overall"]
    assert set(overall) == {"pvm", "null", "center"}
    assert overall["pvm"]["frames"] == 24
    assert (out / "summary.json").exists()


def test_train_job_bad_config_errors_cleanly(client, workspace):
    resp = client.post("/jobs/train", json={
        "config_path": str(workspace / "missing.json"),
        "out_dir": str(workspace / "x"), "steps": 10})
    status = wait_for(client, resp.json()["job_id"])
    assert status["state"] == "error"
    assert status["error"]


def test_train_request_validation(client, workspace):
    resp = client.post("/jobs/train", json={"out_dir": str(workspace), "steps": 0})
    assert resp.status_code == 422


def test_unknown_job_is_404(client):
    assert client.get("/jobs/definitely-not-a-job").status_code == 404


def test_session_track_delete_lifecycle(client, checkpoint):
    made = client.post("/sessions", json={"checkpoint": checkpoint}).json()
    sid = made["session_id"]
    assert made["config_name"] == "svc-16"
    assert (made["frame_width"], made["frame_height"]) == (16, 16)
    assert made["settle_steps"] == RAW["settle_steps"]
    assert made["step"] == 200

    frame = synth_frame()
    first = client.post(f"/sessions/{sid}/track",
                        json={"pixels": frame.tolist()}).json()
    assert first["frame_index"] == 0
    assert set(first["box"]) == {"x", "y", "w", "h", "present"}
    assert first["median"] <= first["peak"]
    second = client.post(f"/sessions/{sid}/track",
                         json={"pixels": frame.tolist()}).json()
    assert second["frame_index"] == 1

    assert client.delete(f"/sessions/{sid}").json() == {"deleted": sid}
    assert client.post(f"/sessions/{sid}/track",
                       json={"pixels": frame.tolist()}).status_code == 404
    assert client.delete(f"/sessions/{sid}").status_code == 404


def test_track_b64_and_pixel_routes_agree(client, checkpoint):
    frame = synth_frame()
    boxes = []
    for payload in ({"pixels": frame.tolist()}, {"frame_b64": png_b64(frame)}):
        sid = client.post("/sessions",
                          json={"checkpoint": checkpoint}).json()["session_id"]
        boxes.append(client.post(f"/sessions/{sid}/track", json=payload).json())
        client.delete(f"/sessions/{sid}")
    assert boxes[0] == boxes[1]


def test_session_settle_override(client, checkpoint):
    made = client.post("/sessions", json={"checkpoint": checkpoint,
                                          "settle_steps": 3}).json()
    assert made["settle_steps"] == 3
    client.delete(f"/sessions/{made['session_id']}")


def test_session_bad_checkpoint_is_400(client, tmp_path):
    resp = client.post("/sessions", json={"checkpoint": str(tmp_path / "no.pvmckpt")})
    assert resp.status_code == 400


def test_track_frame_validation(client, checkpoint):
    sid = client.post("/sessions",
                      json={"checkpoint": checkpoint}).json()["session_id"]
    frame = synth_frame()
    cases = [
        {},                                                   # neither input
        {"pixels": frame.tolist(), "frame_b64": png_b64(frame)},  # both
        {"pixels": np.zeros((8, 8, 3)).tolist()},             # wrong shape
        {"pixels": (frame + 2.0).tolist()},                   # out of range
        {"frame_b64": base64.b64encode(b"not an image").decode()},
    ]
    for payload in cases:
        assert client.post(f"/sessions/{sid}/track",
                           json=payload).status_code == 400, payload
    client.delete(f"/sessions/{sid}")


def test_track_resizes_oversized_b64_frame(client, checkpoint):
    big = np.round(np.clip(np.kron(synth_frame(), np.ones((2, 2, 1))), 0, 1) * 255) / 255
    sid = client.post("/sessions",
                      json={"checkpoint": checkpoint}).json()["session_id"]
    resp = client.post(f"/sessions/{sid}/track", json={"frame_b64": png_b64(big)})
    assert resp.status_code == 200
    client.delete(f"/sessions/{sid}")
