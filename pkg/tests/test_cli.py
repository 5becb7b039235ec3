"""End-to-end CLI workflows on a miniature dataset."""

import json
from pathlib import Path

import numpy as np
import pytest

from ctxspot.cli import dispatch

TINY_SPEC = {
    "num_classes": 3,
    "feature_dim": 8,
    "video_frames": 120,
    "train_videos": 2,
    "val_videos": 1,
    "test_videos": 1,
    "actions_per_video": 2,
    "signature_frames": 10,
    "cue_frames": 5,
    "event_gap": 30,
    "signature_amplitude": 5.0,
    "seed": 5,
}

TINY_CONFIG = {
    "num_classes": 3,
    "chunk_frames": 120,
    "feature_dim": 8,
    "class_features": 4,
    "receptive_field": 8,
    "mlp_hidden": [8, 6],
    "pyramid_channels": [2, 2, 2, 2],
    "spot_channels": [4, 4],
    "num_predictions": 3,
    "epochs": 2,
    "slicing": [[-10, -5, 10, 20]] * 3,
    "tolerances": [5, 10, 20],
    "validate_every": 1,
    "seed": 9,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(TINY_SPEC))
    config_path = root / "config.json"
    config_path.write_text(json.dumps(TINY_CONFIG))
    data_dir = root / "data"
    assert dispatch(["synth", "--spec", str(spec_path), "--out", str(data_dir)]) == 0
    run_dir = root / "run"
    assert dispatch([
        "train", "--config", str(config_path),
        "--data", str(data_dir), "--out", str(run_dir),
    ]) == 0
    return root


def test_synth_outputs_and_manifest(workspace):
    data_dir = workspace / "data"
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["splits"]["train"] == ["train_000", "train_001"]
    assert (data_dir / "train" / "train_000.feat").exists()
    run_manifest = json.loads((data_dir / "run_manifest.json").read_text())
    assert run_manifest["command"] == "synth"
    assert run_manifest["config_hash"] == manifest["spec_hash"]


def test_synth_rerun_is_identical(workspace, tmp_path):
    spec_path = workspace / "spec.json"
    again = tmp_path / "again"
    assert dispatch(["synth", "--spec", str(spec_path), "--out", str(again)]) == 0
    original = workspace / "data" / "train" / "train_000.feat"
    assert (again / "train" / "train_000.feat").read_bytes() == original.read_bytes()


def test_train_artifacts(workspace):
    run_dir = workspace / "run"
    assert (run_dir / "model.ckpt").exists()
    history = json.loads((run_dir / "history.json").read_text())
    assert len(history) == TINY_CONFIG["epochs"]
    manifest = json.loads((run_dir / "run_manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["config_hash"] and manifest["data_hash"]


def test_predict_then_evaluate_then_highlights(workspace):
    run_dir = workspace / "run"
    test_dir = workspace / "data" / "test"
    pred_path = workspace / "pred_test_000.json"
    assert dispatch([
        "predict", "--model", str(run_dir / "model.ckpt"),
        "--features", str(test_dir / "test_000.feat"),
        "--out", str(pred_path),
        "--confidence-threshold", "0.0",
    ]) == 0
    payload = json.loads(pred_path.read_text())
    assert payload["video_id"] == "test_000"
    assert len(payload["segmentation"]) == TINY_SPEC["video_frames"]
    assert payload["spots"], "threshold 0 keeps every prediction"

    report_path = workspace / "report.json"
    assert dispatch([
        "evaluate", "--gt", str(test_dir), "--pred", str(pred_path),
        "--config", str(workspace / "config.json"),
        "--out", str(report_path),
    ]) == 0
    report = json.loads(report_path.read_text())
    assert "average_map" in report and 0.0 <= report["average_map"] <= 1.0
    assert len(report["map_per_tolerance"]) == len(TINY_CONFIG["tolerances"])
    assert report_path.with_name("report_curves.csv").exists()

    reel_path = workspace / "reel.json"
    assert dispatch([
        "highlights", "--model-output", str(pred_path),
        "--gt", str(test_dir / "test_000.annotations.json"),
        "--out", str(reel_path),
    ]) == 0
    reel = json.loads(reel_path.read_text())
    assert "clips" in reel and "precision_table" in reel
    assert reel_path.with_name("reel_precision.csv").exists()


def test_encode_csv(workspace, tmp_path):
    out = tmp_path / "tse.csv"
    annotations = workspace / "data" / "train" / "train_000.annotations.json"
    assert dispatch([
        "encode", "--annotations", str(annotations),
        "--config", str(workspace / "config.json"), "--out", str(out),
    ]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "frame_index,s_class_0,s_class_1,s_class_2"
    assert len(lines) == TINY_SPEC["video_frames"] + 1


def test_sweep_rows(workspace, tmp_path):
    out = tmp_path / "sweep"
    assert dispatch([
        "sweep", "--lambdas", "0,1.5",
        "--data", str(workspace / "data"),
        "--config", str(workspace / "config.json"),
        "--out", str(out),
    ]) == 0
    rows = json.loads((out / "sweep.json").read_text())
    assert [row["lambda_seg"] for row in rows] == [0.0, 1.5]
    assert all(0.0 <= row["average_map"] <= 1.0 for row in rows)


def test_gradcheck_passes():
    assert dispatch(["gradcheck", "--samples", "2000"]) == 0


def test_unknown_command_exit_code():
    assert dispatch(["frobnicate"]) == 64


def test_invalid_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"num_classes": 3, "margin_max": 7}))
    out = tmp_path / "tse.csv"
    annotations = tmp_path / "a.json"
    annotations.write_text(json.dumps(
        {"video_id": "v", "fps": 2.0, "num_frames": 4, "actions": []}
    ))
    code = dispatch([
        "encode", "--annotations", str(annotations),
        "--config", str(bad), "--out", str(out),
    ])
    assert code == 65


def test_missing_file_exit_code(tmp_path):
    code = dispatch([
        "encode", "--annotations", str(tmp_path / "absent.json"),
        "--out", str(tmp_path / "out.csv"),
    ])
    assert code == 74
