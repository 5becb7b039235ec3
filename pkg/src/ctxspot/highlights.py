"""Highlights: score-driven opportunity segments, reel assembly, precision table.

High segmentation-score stretches with no annotated action nearby are treated
as unannotated interesting events. The reel combines windows around goal/card
spots with such segments for the goal class; substitutions are dismissed. On
synthetic data, detected segments can be scored automatically against planted
opportunity windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import VideoAnnotations

EXCLUSION_FRAMES = 10
MERGE_GAP_FRAMES = 5
CLIP_BEFORE_SECONDS = 15.0
CLIP_AFTER_SECONDS = 20.0
SEGMENT_MIN_SCORE = 0.5
ETA_GRID = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

GOAL_CLASS = 0
CARD_CLASS = 1
SUBSTITUTION_CLASS = 2


@dataclass(frozen=True)
class HighlightClip:
    start: float  # seconds
    end: float
    source: str   # "spot" | "segmentation"
    class_index: int
    peak: float   # confidence (spot) or top segmentation score (segment)

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"clip start {self.start} must precede end {self.end}")


def detect_opportunity_segments(
    scores: np.ndarray,
    eta: float,
    action_frames,
    exclusion_frames: int = EXCLUSION_FRAMES,
    merge_gap_frames: int = MERGE_GAP_FRAMES,
) -> list[tuple[int, int]]:
    """Maximal frame runs with score >= eta, away from annotated actions.

    Runs separated by gaps shorter than merge_gap_frames are merged first; any
    run containing or within exclusion_frames of an annotated action is then
    dropped. Returned intervals are inclusive (start_frame, end_frame) pairs.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must be in (0, 1), got {eta}")
    scores = np.asarray(scores, dtype=np.float64)
    mask = scores >= eta
    if not mask.any():
        return []
    edges = np.flatnonzero(np.diff(np.concatenate(([False], mask, [False]))))
    runs = [(int(edges[i]), int(edges[i + 1]) - 1) for i in range(0, len(edges), 2)]
    merged = [runs[0]]
    for start, end in runs[1:]:
        if start - merged[-1][1] - 1 < merge_gap_frames:
            merged[-1] = (merged[-1][0], end)
        else:
            merged.append((start, end))
    return [
        (start, end)
        for start, end in merged
        if not any(start - exclusion_frames <= a <= end + exclusion_frames for a in action_frames)
    ]


def _merge_clips(clips: list[HighlightClip]) -> list[HighlightClip]:
    merged: list[HighlightClip] = []
    for clip in sorted(clips, key=lambda c: (c.start, c.end)):
        if merged and clip.start <= merged[-1].end:
            last = merged[-1]
            merged[-1] = HighlightClip(
                start=last.start,
                end=max(last.end, clip.end),
                source="spot" if "spot" in (last.source, clip.source) else "segmentation",
                class_index=last.class_index,
                peak=max(last.peak, clip.peak),
            )
        else:
            merged.append(clip)
    return merged


def build_reel(
    spots,
    segments,
    fps: float,
    spot_classes=(GOAL_CLASS, CARD_CLASS),
    segment_class: int = GOAL_CLASS,
    segment_min_score: float = SEGMENT_MIN_SCORE,
    before_seconds: float = CLIP_BEFORE_SECONDS,
    after_seconds: float = CLIP_AFTER_SECONDS,
    video_end_seconds: float | None = None,
) -> list[HighlightClip]:
    """Chronological merged clips around goal/card spots and goal segments.

    spots are (class, frame, confidence); segments are (class, start_frame,
    end_frame, peak_score) from detect_opportunity_segments. Substitution
    spots (any class outside spot_classes) are dismissed. Clips run from
    before_seconds ahead of the event to after_seconds past it.
    """
    clips: list[HighlightClip] = []

    def clamp(start, end):
        start = max(0.0, start)
        if video_end_seconds is not None:
            end = min(end, video_end_seconds)
        return start, end

    for cls, frame, confidence in spots:
        if cls not in spot_classes:
            continue
        t = frame / fps
        start, end = clamp(t - before_seconds, t + after_seconds)
        clips.append(
            HighlightClip(start=start, end=end, source="spot", class_index=cls, peak=confidence)
        )
    for cls, start_frame, end_frame, peak in segments:
        if cls != segment_class or peak < segment_min_score:
            continue
        start, end = clamp(start_frame / fps - before_seconds, end_frame / fps + after_seconds)
        clips.append(
            HighlightClip(
                start=start, end=end, source="segmentation", class_index=cls, peak=peak
            )
        )
    return _merge_clips(clips)


@dataclass(frozen=True)
class PrecisionTable:
    rows: tuple[dict, ...]
    evaluable: bool
    reason: str = ""


def precision_vs_threshold(
    curves_by_video: dict[str, np.ndarray],
    annotations_by_video: dict[str, VideoAnnotations],
    etas=ETA_GRID,
    segment_class: int = GOAL_CLASS,
    opportunity_window: tuple[int, int] = (10, 20),
    exclusion_frames: int = EXCLUSION_FRAMES,
    merge_gap_frames: int = MERGE_GAP_FRAMES,
) -> PrecisionTable:
    """Precision of detected segments against planted opportunity windows.

    A detected segment is a true positive when it overlaps the window
    [t - before, t + after] of any planted opportunity of the segment class.
    Requires synthetic annotations with opportunities; returns a non-evaluable
    table otherwise.
    """
    if not any(a.opportunities for a in annotations_by_video.values()):
        return PrecisionTable(
            rows=(), evaluable=False, reason="annotations carry no opportunity events"
        )
    before, after = opportunity_window
    rows = []
    for eta in etas:
        detected = 0
        hits = 0
        for video_id, curves in curves_by_video.items():
            annotations = annotations_by_video[video_id]
            action_frames = annotations.class_actions(segment_class)
            windows = [
                (frame - before, frame + after)
                for cls, frame in annotations.opportunities
                if cls == segment_class
            ]
            segments = detect_opportunity_segments(
                curves[:, segment_class],
                eta,
                action_frames,
                exclusion_frames=exclusion_frames,
                merge_gap_frames=merge_gap_frames,
            )
            detected += len(segments)
            hits += sum(
                1
                for start, end in segments
                if any(start <= hi and lo <= end for lo, hi in windows)
            )
        rows.append(
            {
                "eta": float(eta),
                "precision": hits / detected if detected else None,
                "segments": detected,
            }
        )
    return PrecisionTable(rows=tuple(rows), evaluable=True)
