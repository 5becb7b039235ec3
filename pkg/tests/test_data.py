"""Annotation/feature I/O, config validation, and chunk sampling."""

import json
import math

import numpy as np
import pytest

from ctxspot.config import ConfigError, SpottingConfig
from ctxspot.data import (
    AnnotationError,
    Chunk,
    FeatureFileError,
    FeatureSequence,
    VideoAnnotations,
    load_annotations,
    load_features,
    sample_chunks,
    save_annotations,
    save_features,
)


def write_annotation_file(tmp_path, payload, name="video.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def test_load_annotations_roundtrip(tmp_path):
    path = write_annotation_file(
        tmp_path,
        {"video_id": "v1", "fps": 2.0, "num_frames": 240,
         "actions": [{"class": 0, "frame": 60}]},
    )
    annotations = load_annotations(path)
    assert annotations.actions == ((0, 60),)
    assert annotations.num_frames == 240 and annotations.fps == 2.0


def test_load_annotations_sorts(tmp_path):
    path = write_annotation_file(
        tmp_path,
        {"video_id": "v", "fps": 2.0, "num_frames": 100,
         "actions": [{"class": 1, "frame": 50}, {"class": 0, "frame": 10}]},
    )
    assert load_annotations(path).actions == ((0, 10), (1, 50))


def test_load_annotations_rejects_out_of_range(tmp_path):
    path = write_annotation_file(
        tmp_path,
        {"video_id": "v", "fps": 2.0, "num_frames": 240,
         "actions": [{"class": 0, "frame": 240}]},
    )
    with pytest.raises(AnnotationError, match="frame index out of range"):
        load_annotations(path)


def test_load_annotations_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_annotations(tmp_path / "absent.json")


def test_load_annotations_malformed(tmp_path):
    path = write_annotation_file(
        tmp_path, {"video_id": "v", "fps": 2.0, "actions": []}
    )
    with pytest.raises(AnnotationError, match="num_frames"):
        load_annotations(path)
    bad_entry = write_annotation_file(
        tmp_path,
        {"video_id": "v", "fps": 2.0, "num_frames": 10,
         "actions": [{"class": "x", "frame": 1}]},
        name="bad.json",
    )
    with pytest.raises(AnnotationError, match=r"actions\[0\].class"):
        load_annotations(bad_entry)


def test_annotations_reject_duplicates():
    with pytest.raises(AnnotationError):
        VideoAnnotations("v", 2.0, 100, actions=((0, 5), (0, 5)))


def test_save_then_load_annotations(tmp_path):
    annotations = VideoAnnotations(
        "v", 2.0, 100, actions=((0, 5), (1, 60)), opportunities=((0, 30),)
    )
    path = tmp_path / "a.json"
    save_annotations(path, annotations)
    assert load_annotations(path) == annotations


def test_features_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    features = FeatureSequence("v", rng.normal(size=(240, 16)).astype(np.float32))
    path = tmp_path / "v.feat"
    save_features(path, features)
    loaded = load_features(path)
    assert loaded.video_id == "v"
    assert loaded.values.tobytes() == features.values.tobytes()


def test_features_zero_matrix(tmp_path):
    path = tmp_path / "z.feat"
    save_features(path, FeatureSequence("z", np.zeros((240, 16), dtype=np.float32)))
    loaded = load_features(path)
    assert loaded.values.shape == (240, 16)
    assert not loaded.values.any()


def test_features_shape_mismatch(tmp_path):
    path = tmp_path / "v.feat"
    np.zeros(239 * 16, dtype="<f4").tofile(path)
    (tmp_path / "v.feat.json").write_text(
        json.dumps({"rows": 240, "cols": 16, "video_id": "v"})
    )
    with pytest.raises(FeatureFileError, match="shape mismatch"):
        load_features(path)


def test_features_reject_non_finite(tmp_path):
    path = tmp_path / "v.feat"
    data = np.zeros(4, dtype="<f4")
    data[2] = np.nan
    data.tofile(path)
    (tmp_path / "v.feat.json").write_text(
        json.dumps({"rows": 2, "cols": 2, "video_id": "v"})
    )
    with pytest.raises(FeatureFileError, match="non-finite"):
        load_features(path)


def test_config_defaults_match_tuned_values():
    cfg = SpottingConfig()
    assert cfg.margin_max == 0.9 and cfg.margin_min == 0.1
    assert cfg.chunk_frames == 240 and cfg.num_predictions == 5
    assert cfg.fps == 2.0 and cfg.class_features == 16 and cfg.receptive_field == 80
    assert cfg.alpha == (1.0, 5.0, 1.0, 1.0, 1.0)
    assert cfg.beta == 0.5 and cfg.lambda_seg == 1.5
    assert cfg.slicing == ((-40, -20, 120, 180), (-40, -20, 20, 40), (-80, -40, 20, 40))


@pytest.mark.parametrize(
    "bad_k",
    [(-20, -40, 120, 180), (-40, -20, 180, 120), (-40, 0, 120, 180),
     (-40, -20, -5, 180), (-40, -40, 120, 180), (-40, -20, 120, 120)],
)
def test_config_rejects_bad_slicing(bad_k):
    with pytest.raises(ConfigError):
        SpottingConfig(slicing=(bad_k,) * 3)


def test_degenerate_slicing_requires_opt_in():
    k = ((-1, -1, 1, 1),) * 3
    with pytest.raises(ConfigError):
        SpottingConfig(slicing=k)
    cfg = SpottingConfig(slicing=k, allow_degenerate_slicing=True)
    assert cfg.slicing == k


def test_config_rejects_bad_margins():
    with pytest.raises(ConfigError):
        SpottingConfig(margin_min=0.9, margin_max=0.5)
    with pytest.raises(ConfigError):
        SpottingConfig(margin_max=1.5)


def test_config_from_json_slicing_seconds(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({
        "num_classes": 1,
        "slicing_seconds": [[-20, -10, 60, 90]],
        "fps": 2.0,
    }))
    cfg = SpottingConfig.from_json(path)
    assert cfg.slicing == ((-40, -20, 120, 180),)


def test_config_rejects_unknown_fields():
    with pytest.raises(ConfigError, match="unknown config fields"):
        SpottingConfig.from_dict({"num_classs": 3})


def test_config_hash_changes_with_fields():
    assert SpottingConfig().config_hash() != SpottingConfig(seed=1).config_hash()


def _video(num_frames=240, actions=((0, 60), (1, 120), (2, 200)), dim=4):
    annotations = VideoAnnotations("v", 2.0, num_frames, actions=actions)
    rng = np.random.default_rng(1)
    features = FeatureSequence("v", rng.normal(size=(num_frames, dim)).astype(np.float32))
    return features, annotations


def _cfg(**kw):
    defaults = dict(feature_dim=4)
    defaults.update(kw)
    return SpottingConfig(**defaults)


def test_sample_chunks_counts():
    features, annotations = _video()
    chunks = sample_chunks(annotations, features, _cfg(), np.random.default_rng(0))
    # one per action plus ceil(3/3) = 1 background chunk
    assert len(chunks) == 4


def test_sample_chunks_empty_video():
    features, annotations = _video(actions=())
    assert sample_chunks(annotations, features, _cfg(), np.random.default_rng(0)) == []


def test_sample_chunks_requested_background_only():
    features, annotations = _video(actions=())
    chunks = sample_chunks(
        annotations, features, _cfg(), np.random.default_rng(0), n_background=2
    )
    assert len(chunks) == 2
    assert all(not c.actions for c in chunks)


def test_action_chunks_contain_their_action():
    features, annotations = _video()
    rng = np.random.default_rng(3)
    for _ in range(100):
        chunks = sample_chunks(annotations, features, _cfg(), rng)
        for chunk, (cls, frame) in zip(chunks[:3], annotations.actions):
            assert (cls, frame - chunk.start) in chunk.actions
        for chunk in chunks[3:]:
            assert not chunk.actions


def test_padding_arithmetic():
    """Action at frame 5: any sampled start below zero pads the prefix with
    exactly -start zero rows."""
    features, annotations = _video(actions=((0, 5),))
    rng = np.random.default_rng(7)
    saw_padding = False
    for _ in range(50):
        chunk = sample_chunks(annotations, features, _cfg(), rng, n_background=0)[0]
        offset = 5 - chunk.start
        assert 0 <= offset < 240
        assert chunk.padded_prefix == max(0, -chunk.start)
        assert chunk.padded_suffix == max(0, chunk.start + 240 - 240)
        if chunk.padded_prefix > 0:
            saw_padding = True
            assert not chunk.features[: chunk.padded_prefix].any()
            assert (0, offset) in chunk.actions
    assert saw_padding


def test_sampling_deterministic():
    features, annotations = _video()
    a = sample_chunks(annotations, features, _cfg(), np.random.default_rng(42))
    b = sample_chunks(annotations, features, _cfg(), np.random.default_rng(42))
    assert len(a) == len(b)
    for ca, cb in zip(a, b):
        assert ca.start == cb.start and ca.actions == cb.actions
        assert np.array_equal(ca.features, cb.features)


def test_background_chunks_avoid_all_actions():
    features, annotations = _video(num_frames=720, actions=((0, 100), (1, 400), (2, 650)))
    rng = np.random.default_rng(9)
    for _ in range(200):
        chunks = sample_chunks(annotations, features, _cfg(), rng)
        assert len(chunks) == 4
        background = chunks[3]
        for _, frame in annotations.actions:
            assert not background.start <= frame < background.start + 240


def test_chunk_rejects_bad_offsets():
    with pytest.raises(ValueError):
        Chunk(features=np.zeros((10, 2), dtype=np.float32), actions=((0, 10),),
              video_id="v", start=0)
