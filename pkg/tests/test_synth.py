"""Synthetic generator: determinism, planted signal, balance, manifests."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from ctxspot.synth import SynthSpec, class_patterns, generate_dataset, generate_split, generate_video


def _tree_hash(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            digest.update(path.name.encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


def test_no_event_video_is_pure_noise():
    spec = SynthSpec(actions_per_video=0, opportunity_rate=0.0)
    features, annotations = generate_video(spec, np.random.default_rng(0), "v")
    assert annotations.actions == () and annotations.opportunities == ()
    # Projection onto every signature direction stays near zero in the mean.
    signatures, _ = class_patterns(spec)
    projections = features.values @ signatures.T
    assert np.abs(projections.mean(axis=0)).max() < 0.5


def test_signature_window_separable():
    spec = SynthSpec()
    signatures, _ = class_patterns(spec)
    features, annotations = generate_video(
        spec, np.random.default_rng(1), "v", signatures=signatures, cues=None
    )
    assert annotations.actions
    for cls, frame in annotations.actions:
        window = features.values[frame : frame + spec.signature_frames]
        projection = window @ signatures[cls]
        assert projection.mean() >= spec.signature_amplitude / 2


def test_opportunity_only_video():
    spec = SynthSpec(actions_per_video=0, opportunity_rate=1.0)
    features, annotations = generate_video(spec, np.random.default_rng(2), "v")
    assert annotations.actions == ()
    assert len(annotations.opportunities) == 1
    assert annotations.opportunities[0][0] == 0


def test_actions_respect_spacing_and_bounds():
    spec = SynthSpec()
    for seed in range(20):
        _, annotations = generate_video(spec, np.random.default_rng(seed), "v", video_index=seed)
        events = sorted(f for _, f in annotations.actions + annotations.opportunities)
        assert all(b - a >= spec.event_gap for a, b in zip(events, events[1:]))
        for frame in events:
            assert spec.cue_frames <= frame <= spec.video_frames - spec.signature_frames


def test_in_chunk_action_count_bounded_by_predictions():
    spec = SynthSpec()
    for seed in range(20):
        _, annotations = generate_video(spec, np.random.default_rng(seed), "v", video_index=seed)
        frames = [f for _, f in annotations.actions]
        for start in range(-239, spec.video_frames):
            inside = sum(start <= f < start + 240 for f in frames)
            assert inside <= 5


def test_split_class_balance():
    spec = SynthSpec()
    videos = generate_split(spec, "train", spec.train_videos)
    counts = np.zeros(spec.num_classes)
    for _, annotations in videos:
        for cls, _ in annotations.actions:
            counts[cls] += 1
    assert counts.sum() == spec.train_videos * spec.actions_per_video
    assert np.all(np.abs(counts - counts.mean()) <= 0.1 * counts.mean() + 1)


def test_dataset_layout_and_determinism(tmp_path):
    spec = SynthSpec(train_videos=3, val_videos=1, test_videos=1)
    manifest = generate_dataset(spec, tmp_path / "a")
    assert manifest["splits"]["train"] == ["train_000", "train_001", "train_002"]
    files = sorted(p.name for p in (tmp_path / "a" / "train").iterdir())
    assert files == sorted(
        [f"train_{i:03d}{ext}" for i in range(3)
         for ext in (".feat", ".feat.json", ".annotations.json")]
    )
    generate_dataset(spec, tmp_path / "b")
    assert _tree_hash(tmp_path / "a") == _tree_hash(tmp_path / "b")


def test_manifest_hash_tracks_spec(tmp_path):
    base = SynthSpec(train_videos=1, val_videos=1, test_videos=1)
    changed = SynthSpec(train_videos=1, val_videos=1, test_videos=1, noise_sigma=2.0)
    m1 = generate_dataset(base, tmp_path / "a")
    m2 = generate_dataset(changed, tmp_path / "b")
    assert m1["spec_hash"] != m2["spec_hash"]


def test_signatures_not_collinear():
    signatures, cues = class_patterns(SynthSpec())
    gram = signatures @ signatures.T
    np.fill_diagonal(gram, 0.0)
    assert np.abs(gram).max() < 0.9


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(cue_prob=1.5)
    with pytest.raises(ValueError):
        SynthSpec(noise_sigma=0.0)
    with pytest.raises(ValueError):
        SynthSpec(signature_frames=0)


def test_video_too_short_for_events():
    spec = SynthSpec(video_frames=100, actions_per_video=4)
    with pytest.raises(ValueError, match="too short"):
        generate_video(spec, np.random.default_rng(0), "v")
