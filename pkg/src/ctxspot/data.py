"""Annotation and feature file I/O plus training-chunk sampling.

Annotations are JSON. Features are flat little-endian float32, row major, with
a JSON sidecar ``<path>.json`` carrying ``rows``, ``cols`` and ``video_id``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SpottingConfig

BACKGROUND_ATTEMPTS = 200


class AnnotationError(ValueError):
    """An annotation file is malformed or violates an invariant."""


class FeatureFileError(ValueError):
    """A feature file disagrees with its sidecar or holds invalid values."""


@dataclass(frozen=True)
class VideoAnnotations:
    video_id: str
    fps: float
    num_frames: int
    actions: tuple[tuple[int, int], ...] = ()        # (class, frame), frame-sorted
    opportunities: tuple[tuple[int, int], ...] = ()  # unannotated events, synthetic only

    def __post_init__(self):
        if self.num_frames < 0:
            raise AnnotationError(f"num_frames must be >= 0, got {self.num_frames}")
        if self.fps <= 0:
            raise AnnotationError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "actions", tuple((int(c), int(f)) for c, f in self.actions))
        object.__setattr__(
            self, "opportunities", tuple((int(c), int(f)) for c, f in self.opportunities)
        )
        frames = [f for _, f in self.actions]
        if frames != sorted(frames):
            raise AnnotationError("actions must be sorted by frame index")
        for i, (cls, frame) in enumerate(self.actions):
            if cls < 0:
                raise AnnotationError(f"actions[{i}].class: negative class {cls}")
            if not 0 <= frame < self.num_frames:
                raise AnnotationError(f"actions[{i}].frame: frame index out of range")
        if len(set(self.actions)) != len(self.actions):
            raise AnnotationError("duplicate (class, frame) action")
        for i, (cls, frame) in enumerate(self.opportunities):
            if not 0 <= frame < self.num_frames:
                raise AnnotationError(f"opportunities[{i}].frame: frame index out of range")

    def class_actions(self, cls: int) -> list[int]:
        return [f for c, f in self.actions if c == cls]


@dataclass(frozen=True)
class FeatureSequence:
    video_id: str
    values: np.ndarray  # (num_frames, dim) float32

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise FeatureFileError(f"features must be 2-D, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise FeatureFileError("features contain non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Chunk:
    """A fixed-length window of frame features used as the training unit."""

    features: np.ndarray                  # (chunk_frames, dim) float32
    actions: tuple[tuple[int, int], ...]  # (class, offset within chunk)
    video_id: str
    start: int                            # video frame index of row 0, may be < 0
    padded_prefix: int = 0
    padded_suffix: int = 0

    def __post_init__(self):
        n = self.features.shape[0]
        for cls, off in self.actions:
            if not 0 <= off < n:
                raise ValueError(f"chunk action offset {off} outside [0, {n})")


def load_annotations(path: str | Path) -> VideoAnnotations:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"annotation file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise AnnotationError(f"{path}: top level must be an object")
    for key, kind in (("video_id", str), ("fps", (int, float)), ("num_frames", int)):
        if key not in raw:
            raise AnnotationError(f"{path}: missing field '{key}'")
        if not isinstance(raw[key], kind) or isinstance(raw[key], bool):
            raise AnnotationError(f"{path}: field '{key}' has wrong type")

    def read_events(key):
        events = []
        for i, entry in enumerate(raw.get(key, [])):
            if not isinstance(entry, dict):
                raise AnnotationError(f"{path}: {key}[{i}] must be an object")
            for sub in ("class", "frame"):
                if sub not in entry or not isinstance(entry[sub], int):
                    raise AnnotationError(f"{path}: {key}[{i}].{sub} missing or not an integer")
            events.append((entry["class"], entry["frame"]))
        return events

    actions = sorted(read_events("actions"), key=lambda cf: (cf[1], cf[0]))
    opportunities = sorted(read_events("opportunities"), key=lambda cf: (cf[1], cf[0]))
    try:
        return VideoAnnotations(
            video_id=raw["video_id"],
            fps=float(raw["fps"]),
            num_frames=raw["num_frames"],
            actions=tuple(actions),
            opportunities=tuple(opportunities),
        )
    except AnnotationError as exc:
        raise AnnotationError(f"{path}: {exc}") from exc


def save_annotations(path: str | Path, annotations: VideoAnnotations) -> None:
    payload = {
        "video_id": annotations.video_id,
        "fps": annotations.fps,
        "num_frames": annotations.num_frames,
        "actions": [{"class": c, "frame": f} for c, f in annotations.actions],
    }
    if annotations.opportunities:
        payload["opportunities"] = [
            {"class": c, "frame": f} for c, f in annotations.opportunities
        ]
    Path(path).write_text(json.dumps(payload, indent=1))


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def load_features(path: str | Path) -> FeatureSequence:
    path = Path(path)
    sidecar = _sidecar_path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature file not found: {path}")
    if not sidecar.exists():
        raise FileNotFoundError(f"feature sidecar not found: {sidecar}")
    meta = json.loads(sidecar.read_text())
    for key in ("rows", "cols", "video_id"):
        if key not in meta:
            raise FeatureFileError(f"{sidecar}: missing field '{key}'")
    rows, cols = int(meta["rows"]), int(meta["cols"])
    data = np.fromfile(path, dtype="<f4")
    if data.size != rows * cols:
        raise FeatureFileError(
            f"{path}: shape mismatch: sidecar says {rows}x{cols}="
            f"{rows * cols} floats, file holds {data.size}"
        )
    if not np.isfinite(data).all():
        raise FeatureFileError(f"{path}: non-finite values")
    return FeatureSequence(video_id=meta["video_id"], values=data.reshape(rows, cols))


def save_features(path: str | Path, features: FeatureSequence) -> None:
    path = Path(path)
    features.values.astype("<f4").tofile(path)
    meta = {
        "rows": features.num_frames,
        "cols": features.dim,
        "video_id": features.video_id,
    }
    _sidecar_path(path).write_text(json.dumps(meta))


def _cut_chunk(
    features: FeatureSequence, annotations: VideoAnnotations, start: int, chunk_frames: int
) -> Chunk:
    num_frames = features.num_frames
    end = start + chunk_frames
    out = np.zeros((chunk_frames, features.dim), dtype=np.float32)
    lo, hi = max(start, 0), min(end, num_frames)
    if hi > lo:
        out[lo - start : hi - start] = features.values[lo:hi]
    actions = tuple(
        (cls, frame - start) for cls, frame in annotations.actions if start <= frame < end
    )
    return Chunk(
        features=out,
        actions=actions,
        video_id=annotations.video_id,
        start=start,
        padded_prefix=max(0, -start),
        padded_suffix=max(0, end - num_frames),
    )


def sample_chunks(
    annotations: VideoAnnotations,
    features: FeatureSequence,
    cfg: SpottingConfig,
    rng: np.random.Generator,
    n_background: int | None = None,
) -> list[Chunk]:
    """Draw one chunk around each action plus balancing background chunks.

    Each action lands at a uniformly random offset within its chunk. Background
    chunks are windows containing no action of any class; they are searched by
    rejection with a bounded number of attempts, so densely annotated videos
    may yield fewer than requested. Frames outside the video are zero padded.
    """
    n = cfg.chunk_frames
    chunks = []
    for cls, frame in annotations.actions:
        offset = int(rng.integers(0, n))
        chunks.append(_cut_chunk(features, annotations, frame - offset, n))
    if n_background is None:
        n_background = math.ceil(len(annotations.actions) / cfg.num_classes)
    action_frames = np.array([f for _, f in annotations.actions], dtype=np.int64)
    for _ in range(n_background):
        for _attempt in range(BACKGROUND_ATTEMPTS):
            start = int(rng.integers(-(n - 1), max(annotations.num_frames, 1)))
            if action_frames.size == 0 or not (
                (action_frames >= start) & (action_frames < start + n)
            ).any():
                chunks.append(_cut_chunk(features, annotations, start, n))
                break
    return chunks


def load_split(split_dir: str | Path) -> list[tuple[FeatureSequence, VideoAnnotations]]:
    """Load every (features, annotations) pair below a dataset split directory."""
    split_dir = Path(split_dir)
    if not split_dir.is_dir():
        raise FileNotFoundError(f"split directory not found: {split_dir}")
    videos = []
    for feat_path in sorted(split_dir.glob("*.feat")):
        annot_path = feat_path.with_name(feat_path.name[: -len(".feat")] + ".annotations.json")
        if not annot_path.exists():
            raise FileNotFoundError(f"missing annotations for {feat_path}: {annot_path}")
        videos.append((load_features(feat_path), load_annotations(annot_path)))
    return videos
