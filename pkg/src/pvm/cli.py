"""Command line client for the training/tracking service.

Every subcommand talks HTTP to a server given with --server; without it, an
in-process app instance handles the same requests, so single-machine use
needs no running daemon while still exercising the exact service code path.
"""

from __future__ import annotations

import base64
import json
import sys
import time
from pathlib import Path

import click
import httpx


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    import warnings
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Using `httpx` with")
        from fastapi.testclient import TestClient

    from .service.app import create_app
    return TestClient(create_app())


def _check(resp):
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        raise click.ClickException(f"server error {resp.status_code}: {detail}")
    return resp.json()


def _wait_for_job(client, job_id: str, poll: float = 0.5) -> dict:
    last = ""
    while True:
        status = _check(client.get(f"/jobs/{job_id}"))
        progress = status.get("progress") or {}
        line = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in progress.items() if not k.startswith("curves"))
        if line and line != last:
            click.echo(f"  {line}")
            last = line
        if status["state"] == "done":
            return status["result"] or {}
        if status["state"] == "error":
            raise click.ClickException(f"job failed: {status['error']}")
        time.sleep(poll)


@click.group()
def main():
    """Predictive vision model: train, evaluate, inspect, track."""


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8040, show_default=True, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app
    uvicorn.run(create_app(), host=host, port=port)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Model config JSON (required unless --from is given).")
@click.option("--data", multiple=True, type=click.Path(),
              help="Sequence directory or directory of sequences; repeatable.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output directory for checkpoints and the training log.")
@click.option("--steps", required=True, type=int, help="Training steps to run.")
@click.option("--regime", type=click.Choice(["joint", "prime"]), default="joint",
              show_default=True,
              help="joint trains everything on the schedule; prime freezes the "
                   "predictive weights and trains only the readout.")
@click.option("--from", "from_checkpoint", type=click.Path(), default=None,
              help="Checkpoint to continue from.")
@click.option("--readout-lr", type=float, default=None,
              help="Constant readout learning rate (prime regime).")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--checkpoint-every", type=int, default=0, show_default=True,
              help="Also checkpoint every N steps (0: only at the end).")
@click.option("--reset-readout/--keep-readout", default=True, show_default=True,
              help="Reinitialize the readout head when priming.")
@click.option("--server", default=None, help="Service URL; default runs in-process.")
def train(config_path, data, out_dir, steps, regime, from_checkpoint, readout_lr,
          workers, seed, checkpoint_every, reset_readout, server):
    """Train a model online over a frame stream."""
    req = {
        "config_path": str(Path(config_path).resolve()) if config_path else None,
        "data": [str(Path(d).resolve()) for d in data],
        "out_dir": str(Path(out_dir).resolve()),
        "steps": steps,
        "regime": regime,
        "from_checkpoint": str(Path(from_checkpoint).resolve()) if from_checkpoint else None,
        "readout_lr": readout_lr,
        "workers": workers,
        "seed": seed,
        "checkpoint_every": checkpoint_every,
        "reset_readout": reset_readout,
    }
    with _client(server) as client:
        job = _check(client.post("/jobs/train", json=req))
        click.echo(f"train job {job['job_id']} submitted")
        result = _wait_for_job(client, job["job_id"])
    click.echo(json.dumps(result, indent=2))


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--data", multiple=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--settle", type=int, default=None,
              help="Evaluation steps per frame (default: config settle_steps).")
@click.option("--baselines", default="",
              help="Comma-separated: null,center,perturbed_gt.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--dump-heatmaps", is_flag=True, default=False,
              help="Also write combined heatmap stacks per sequence.")
@click.option("--server", default=None, help="Service URL; default runs in-process.")
def eval_cmd(checkpoint, data, out_dir, settle, baselines, workers,
             dump_heatmaps, server):
    """Track labeled sequences with a checkpoint and score the results."""
    req = {
        "checkpoint": str(Path(checkpoint).resolve()),
        "data": [str(Path(d).resolve()) for d in data],
        "out_dir": str(Path(out_dir).resolve()),
        "settle": settle,
        "baselines": [b.strip() for b in baselines.split(",") if b.strip()],
        "workers": workers,
        "dump_heatmaps": dump_heatmaps,
    }
    with _client(server) as client:
        job = _check(client.post("/jobs/eval", json=req))
        click.echo(f"eval job {job['job_id']} submitted")
        result = _wait_for_job(client, job["job_id"])
    for name, s in sorted(result.get("overall", {}).items()):
        click.echo(f"{name}: success_auc={s['success_auc']:.4f} "
                   f"precision@20={s['precision_at_20']:.4f} "
                   f"accuracy@1={s['accuracy_at_1']:.4f} "
                   f"confusion={s['confusion']}")
    click.echo(f"summary: {result.get('summary_path')}")


@main.command()
@click.argument("checkpoint", type=click.Path())
@click.option("--server", default=None, help="Service URL; default runs in-process.")
def inspect(checkpoint, server):
    """Validate a checkpoint and print its layout."""
    with _client(server) as client:
        info = _check(client.post(
            "/inspect", json={"checkpoint": str(Path(checkpoint).resolve())}))
    click.echo(json.dumps(info, indent=2))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--settle", type=int, default=None)
@click.option("--server", default=None, help="Service URL; default runs in-process.")
@click.argument("images", nargs=-1, required=True, type=click.Path())
def track(checkpoint, settle, server, images):
    """Stream image files through a tracking session; print a box per frame."""
    with _client(server) as client:
        session = _check(client.post("/sessions", json={
            "checkpoint": str(Path(checkpoint).resolve()),
            "settle_steps": settle,
        }))
        sid = session["session_id"]
        try:
            click.echo("frame_index, present, x, y, w, h, peak, median")
            for image in images:
                payload = base64.b64encode(Path(image).read_bytes()).decode("ascii")
                r = _check(client.post(f"/sessions/{sid}/track",
                                       json={"frame_b64": payload}))
                b = r["box"]
                click.echo(f"{r['frame_index']}, {int(b['present'])}, "
                           f"{b['x']:.2f}, {b['y']:.2f}, {b['w']:.2f}, {b['h']:.2f}, "
                           f"{r['peak']:.2f}, {r['median']:.2f}")
        finally:
            client.delete(f"/sessions/{sid}")


if __name__ == "__main__":
    sys.exit(main())
