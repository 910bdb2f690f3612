"""End-to-end train and eval jobs: artifacts, determinism, resume, errors."""

import copy
import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from pvm.checkpoint import file_sha256, load_system
from pvm.dataset import save_sequence, synth_sequence
from pvm.errors import ConfigError, DatasetError
from pvm.metrics import read_result_log
from pvm.runs import BASELINE_KINDS, resolve_sequences, run_eval_job, run_train_job

from conftest import make_config

RAW = {
    "name": "runs-16",
    "frame_width": 16,
    "frame_height": 16,
    "tile_size": 4,
    "layer_grids": [[4, 4], [2, 2], [1, 1]],
    "hidden_size": 8,
    "heatmap_size": 4,
    "readout_patch_sizes": [1, 2, 4],
    "readout_canvas_sizes": [4, 4, 4],
    "settle_steps": 1,
    "seed": 1000,
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


def write_config(tmp_path, **overrides):
    raw = copy.deepcopy(RAW)
    raw.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return str(path)


def test_resolve_sequences_data_dirs_win(tmp_path):
    config, synth = make_config(synthetic=RAW["synthetic"])
    root = tmp_path / "data"
    for name, seed in (("a", 5), ("b", 6)):
        seq = synth_sequence(dataclasses.replace(synth, seed=seed), (16, 16))
        save_sequence(seq, root / name)
    seqs = resolve_sequences(config, [str(root)], synth)
    assert [s.name for s in seqs] == ["a", "b"]
    assert all(len(s.frames) == RAW["synthetic"]["frames"] for s in seqs)
    assert all(f.shape == (16, 16, 3) for f in seqs[0].frames)


def test_resolve_sequences_synthetic_fallback():
    config, synth = make_config(synthetic=RAW["synthetic"])
    seqs = resolve_sequences(config, [], synth)
    assert len(seqs) == 1
    assert seqs[0].name == "square-42"
    assert len(seqs[0].frames) == 24


def test_resolve_sequences_requires_some_source():
    config, _ = make_config()
    with pytest.raises(DatasetError, match="no data"):
        resolve_sequences(config, [], None)


def test_train_job_writes_artifacts(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    result = run_train_job(config_path=cfg, out_dir=str(out), steps=120,
                           checkpoint_every=60, log_every=40)
    assert result["final_step"] == 120
    final = Path(result["final_checkpoint"])
    assert final.name == "step_0000000120.pvmckpt"
    assert file_sha256(final) == result["final_checkpoint_sha256"]
    assert [Path(p).name for p in result["checkpoints"]] == [
        "step_0000000060.pvmckpt", "step_0000000120.pvmckpt"]
    assert result["last_log_row"]["step"] == 120
    log_lines = Path(result["training_log"]).read_text().splitlines()
    assert log_lines[0] == ("step,p_err_l0,p_err_l1,p_err_l2,"
                            "r_err_l0,r_err_l1,r_err_l2")
    assert len(log_lines) == 4  # header + rows at 40, 80, 120
    system, synth = load_system(final)
    assert system.step_index == 120
    assert synth is not None and synth.seed == 42


def test_train_job_determinism_and_seed_override(tmp_path):
    cfg = write_config(tmp_path)
    shas = [run_train_job(config_path=cfg, out_dir=str(tmp_path / d),
                          steps=80)["final_checkpoint_sha256"]
            for d in ("r1", "r2")]
    assert shas[0] == shas[1]
    other = run_train_job(config_path=cfg, out_dir=str(tmp_path / "r3"),
                          steps=80, seed=123)["final_checkpoint_sha256"]
    assert other != shas[0]


def test_train_job_resume_matches_straight_run(tmp_path):
    cfg = write_config(tmp_path)
    first = run_train_job(config_path=cfg, out_dir=str(tmp_path / "half"),
                          steps=50)
    resumed = run_train_job(from_checkpoint=first["final_checkpoint"],
                            out_dir=str(tmp_path / "resumed"), steps=50)
    straight = run_train_job(config_path=cfg, out_dir=str(tmp_path / "full"),
                             steps=100)
    assert resumed["final_step"] == 100
    assert resumed["final_checkpoint_sha256"] == straight["final_checkpoint_sha256"]


def test_train_job_prime_regime_continues_from_checkpoint(tmp_path):
    cfg = write_config(tmp_path)
    base = run_train_job(config_path=cfg, out_dir=str(tmp_path / "base"),
                         steps=60)
    primed = run_train_job(from_checkpoint=base["final_checkpoint"],
                           out_dir=str(tmp_path / "primed"), steps=30,
                           regime="prime", readout_lr=0.01)
    assert primed["final_step"] == 90
    assert primed["final_checkpoint_sha256"] != base["final_checkpoint_sha256"]


def test_train_job_prime_requires_checkpoint(tmp_path):
    cfg = write_config(tmp_path)
    with pytest.raises(ConfigError, match="prime"):
        run_train_job(config_path=cfg, out_dir=str(tmp_path / "x"),
                      steps=10, regime="prime")


def test_train_job_scratch_requires_config(tmp_path):
    with pytest.raises(ConfigError, match="config"):
        run_train_job(out_dir=str(tmp_path / "x"), steps=10)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    cfg = write_config(tmp)
    result = run_train_job(config_path=cfg, out_dir=str(tmp / "train"),
                           steps=200)
    return result["final_checkpoint"]


def test_eval_job_artifacts_and_summary(tmp_path, trained):
    out = tmp_path / "eval"
    summary = run_eval_job(checkpoint=trained, out_dir=str(out),
                           baselines=list(BASELINE_KINDS))
    assert summary["checkpoint_sha256"] == file_sha256(trained)
    assert summary["settle_steps"] == RAW["settle_steps"]
    assert set(summary["overall"]) == {"pvm", "null", "center", "perturbed_gt"}
    overall = summary["overall"]["pvm"]
    assert overall["frames"] == 24
    assert set(overall) == {"frames", "success_auc", "precision_at_20",
                            "accuracy_at_1", "confusion"}
    assert "curves" not in overall

    seq_dir = out / "square-42"
    boxes = read_result_log(seq_dir / "pvm_results.csv")
    assert len(boxes) == 24
    for name in ("pvm", "null", "center", "perturbed_gt"):
        for curve in ("success", "precision", "accuracy"):
            assert (seq_dir / f"{name}_{curve}.csv").exists()
            assert (out / f"overall_{name}_{curve}.csv").exists()

    on_disk = json.loads(Path(summary["summary_path"]).read_text())
    in_memory = {k: v for k, v in summary.items() if k != "summary_path"}
    assert on_disk == in_memory


def test_eval_job_rerun_is_deterministic(tmp_path, trained):
    runs = [run_eval_job(checkpoint=trained, out_dir=str(tmp_path / d))
            for d in ("e1", "e2")]
    assert runs[0]["overall"] == runs[1]["overall"]
    logs = [(tmp_path / d / "square-42" / "pvm_results.csv").read_bytes()
            for d in ("e1", "e2")]
    assert logs[0] == logs[1]


def test_eval_job_restores_state_between_sequences(tmp_path, trained):
    config = load_system(trained)[0].config
    _, synth = make_config(synthetic=RAW["synthetic"])
    root = tmp_path / "data"
    for name, seed in (("a", 50), ("b", 51)):
        seq = synth_sequence(dataclasses.replace(synth, seed=seed),
                             (config.frame_width, config.frame_height))
        save_sequence(seq, root / name)
    both = run_eval_job(checkpoint=trained, data=[str(root)],
                        out_dir=str(tmp_path / "both"))
    solo = run_eval_job(checkpoint=trained, data=[str(root / "b")],
                        out_dir=str(tmp_path / "solo"))
    assert set(both["sequences"]) == {"a", "b"}
    assert both["sequences"]["b"]["pvm"] == solo["sequences"]["b"]["pvm"]


def test_eval_job_dump_heatmaps(tmp_path, trained):
    out = tmp_path / "eval"
    run_eval_job(checkpoint=trained, out_dir=str(out), dump_heatmaps=True)
    stack = np.load(out / "square-42" / "pvm_heatmaps.npy")
    assert stack.shape == (24, 4, 4)
    assert np.isfinite(stack).all()


def test_eval_job_settle_override(tmp_path, trained):
    summary = run_eval_job(checkpoint=trained, out_dir=str(tmp_path / "e"),
                           settle=3)
    assert summary["settle_steps"] == 3


def test_eval_job_rejects_unknown_baseline(tmp_path, trained):
    with pytest.raises(ConfigError, match="unknown baseline"):
        run_eval_job(checkpoint=trained, out_dir=str(tmp_path / "e"),
                     baselines=["oracle"])


def test_eval_job_rejects_unlabeled_data(tmp_path, trained):
    config = load_system(trained)[0].config
    _, synth = make_config(synthetic=RAW["synthetic"])
    seq = synth_sequence(synth, (config.frame_width, config.frame_height))
    unlabeled = dataclasses.replace(seq, labels=None)
    save_sequence(unlabeled, tmp_path / "data" / "u")
    with pytest.raises(DatasetError, match="no labels"):
        run_eval_job(checkpoint=trained, data=[str(tmp_path / "data")],
                     out_dir=str(tmp_path / "e"))
