"""Synthetic labelled feature sequences with planted action signatures.

Each class owns a fixed random signature direction injected over a short
window starting at the action frame (reliable post-event evidence) plus a
weaker cue direction injected just before the action with some probability
(ambiguous pre-event context). Opportunities are unannotated events carrying
the cue and a truncated signature; they drive the highlights evaluation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import FeatureSequence, VideoAnnotations, save_annotations, save_features


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 3
    feature_dim: int = 16
    video_frames: int = 240
    fps: float = 2.0
    train_videos: int = 8
    val_videos: int = 2
    test_videos: int = 4
    actions_per_video: int = 4          # one per class plus one extra, rotating
    signature_frames: int = 20          # post-action window length
    signature_amplitude: float = 3.0
    cue_frames: int = 10                # pre-action context window length
    cue_amplitude: float = 1.5
    cue_prob: float = 0.7
    opportunity_rate: float = 0.5       # per video, class 0 only
    opportunity_frames: int = 10        # truncated signature length
    opportunity_amplitude_scale: float = 0.6  # softer aftermath than a real action
    noise_sigma: float = 1.0
    event_gap: int = 40                 # min frames between any two events
    seed: int = 7

    def __post_init__(self):
        if self.signature_frames < 1 or self.cue_frames < 1:
            raise ValueError("signature and cue windows must be at least one frame")
        if not 0.0 <= self.cue_prob <= 1.0:
            raise ValueError("cue_prob must be in [0, 1]")
        if not 0.0 <= self.opportunity_rate <= 1.0:
            raise ValueError("opportunity_rate must be in [0, 1]")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        if self.actions_per_video < 0 or self.num_classes < 1:
            raise ValueError("invalid event counts")

    def to_dict(self) -> dict:
        return asdict(self)

    def spec_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthSpec":
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def class_patterns(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Fixed unit signature and cue directions per class, derived from the
    spec seed alone so every video shares them. Redraws until no two
    signatures are close to collinear."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    while True:
        signatures = rng.normal(size=(spec.num_classes, spec.feature_dim))
        signatures /= np.linalg.norm(signatures, axis=1, keepdims=True)
        gram = signatures @ signatures.T
        np.fill_diagonal(gram, 0.0)
        if np.abs(gram).max() < 0.9 or spec.num_classes == 1:
            break
    cues = rng.normal(size=(spec.num_classes, spec.feature_dim))
    cues /= np.linalg.norm(cues, axis=1, keepdims=True)
    return signatures, cues


def _decay(length: int) -> np.ndarray:
    # Sharp onset, fading tail: the event frame is the most salient.
    return np.linspace(1.0, 0.25, length)


def _place_events(spec: SynthSpec, count: int, rng: np.random.Generator) -> list[int]:
    """Sorted event frames with at least event_gap frames between events and
    room for cue and signature windows inside the video."""
    lo = spec.cue_frames
    hi = spec.video_frames - spec.signature_frames
    if count == 0:
        return []
    span = hi - lo - (count - 1) * spec.event_gap
    if span < 0:
        raise ValueError(
            f"video of {spec.video_frames} frames too short for {count} events"
        )
    offsets = np.sort(rng.integers(0, span + 1, size=count))
    return [int(lo + offset + i * spec.event_gap) for i, offset in enumerate(offsets)]


def generate_video(
    spec: SynthSpec,
    rng: np.random.Generator,
    video_id: str,
    video_index: int = 0,
    signatures: np.ndarray | None = None,
    cues: np.ndarray | None = None,
) -> tuple[FeatureSequence, VideoAnnotations]:
    """One video: Gaussian noise plus planted actions and maybe an opportunity.

    Class counts are one action per class plus one extra for class
    (video_index mod C), keeping splits balanced. rng drives all placement and
    noise; signature/cue directions are shared across videos.
    """
    if signatures is None or cues is None:
        signatures, cues = class_patterns(spec)
    classes: list[int] = []
    for c in range(spec.num_classes):
        classes.append(c)
    while len(classes) < spec.actions_per_video:
        classes.append((video_index + len(classes)) % spec.num_classes)
    classes = classes[: spec.actions_per_video]
    has_opportunity = (
        spec.opportunity_rate > 0 and rng.random() < spec.opportunity_rate
    )

    n_events = len(classes) + int(has_opportunity)
    frames = _place_events(spec, n_events, rng)
    slots = rng.permutation(n_events)
    features = rng.normal(0.0, spec.noise_sigma, size=(spec.video_frames, spec.feature_dim))

    actions: list[tuple[int, int]] = []
    opportunities: list[tuple[int, int]] = []
    sig_profile = _decay(spec.signature_frames)
    for slot, frame in zip(slots, frames):
        if has_opportunity and slot == n_events - 1:
            cls = 0
            features[frame - spec.cue_frames : frame] += (
                spec.cue_amplitude * _decay(spec.cue_frames)[::-1, None] * cues[cls]
            )
            w = spec.opportunity_frames
            features[frame : frame + w] += (
                spec.opportunity_amplitude_scale
                * spec.signature_amplitude
                * sig_profile[:w, None]
                * signatures[cls]
            )
            opportunities.append((cls, frame))
        else:
            cls = classes[slot] if slot < len(classes) else classes[-1]
            if rng.random() < spec.cue_prob:
                features[frame - spec.cue_frames : frame] += (
                    spec.cue_amplitude * _decay(spec.cue_frames)[::-1, None] * cues[cls]
                )
            features[frame : frame + spec.signature_frames] += (
                spec.signature_amplitude * sig_profile[:, None] * signatures[cls]
            )
            actions.append((cls, frame))
    actions.sort(key=lambda cf: cf[1])
    annotations = VideoAnnotations(
        video_id=video_id,
        fps=spec.fps,
        num_frames=spec.video_frames,
        actions=tuple(actions),
        opportunities=tuple(opportunities),
    )
    return FeatureSequence(video_id=video_id, values=features), annotations


def generate_split(
    spec: SynthSpec, split: str, n_videos: int
) -> list[tuple[FeatureSequence, VideoAnnotations]]:
    """Deterministic in-memory split; every video gets its own seed stream."""
    signatures, cues = class_patterns(spec)
    split_key = {"train": 1, "val": 2, "test": 3}.get(split)
    if split_key is None:
        raise ValueError(f"unknown split {split!r}")
    seeds = np.random.SeedSequence([spec.seed, split_key]).spawn(n_videos)
    videos = []
    for i, seed in enumerate(seeds):
        video_id = f"{split}_{i:03d}"
        rng = np.random.default_rng(seed)
        videos.append(
            generate_video(spec, rng, video_id, video_index=i, signatures=signatures, cues=cues)
        )
    return videos


def generate_dataset(spec: SynthSpec, out_dir) -> dict:
    """Write train/val/test splits plus a manifest; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = {"train": spec.train_videos, "val": spec.val_videos, "test": spec.test_videos}
    manifest = {
        "seed": spec.seed,
        "spec": spec.to_dict(),
        "spec_hash": spec.spec_hash(),
        "splits": {},
    }
    for split, n_videos in counts.items():
        split_dir = out_dir / split
        split_dir.mkdir(exist_ok=True)
        ids = []
        for features, annotations in generate_split(spec, split, n_videos):
            save_features(split_dir / f"{features.video_id}.feat", features)
            save_annotations(split_dir / f"{features.video_id}.annotations.json", annotations)
            ids.append(features.video_id)
        manifest["splits"][split] = ids
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest
