"""Per-frame, per-class time-shift encoding driven by context slicing.

Every frame receives, for each class, its signed frame distance to the nearby
action that dominates it: a past shift ``s_p >= 0`` or a future shift
``s_f < 0``. Selection between the two follows the context-slicing zones, with
an exact integer comparator deciding inside overlapping transition zones.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Slicing, SpottingConfig, validate_slicing
from .data import VideoAnnotations


@dataclass(frozen=True)
class TseMap:
    """Time-shift values for the frames of one video, one column per class."""

    values: np.ndarray                         # (num_frames, C) int64
    action_frames: tuple[tuple[int, ...], ...]  # per-class frames used


def tse_frame(
    frame: int,
    past_action: int | None,
    future_action: int | None,
    slicing: Slicing,
) -> int:
    """Time-shift of one frame given its nearest past/future action of a class.

    With both neighbours present the past shift wins while the frame is still
    just after the past action, or while it sits in the past transition zone
    and the future action is either far away or loses the zone-relative
    closeness comparison. With a single neighbour that shift is used; with
    none, the far-before value K1 is returned.
    """
    validate_slicing(slicing, allow_degenerate=True)
    k1, k2, k3, k4 = slicing
    if past_action is not None and past_action > frame:
        raise ValueError(f"past action {past_action} is after frame {frame}")
    if future_action is not None and future_action <= frame:
        raise ValueError(f"future action {future_action} is not after frame {frame}")
    if past_action is None and future_action is None:
        return k1
    if future_action is None:
        return frame - past_action
    if past_action is None:
        return frame - future_action
    sp = frame - past_action
    sf = frame - future_action
    if sp < k3:
        return sp
    if sp >= k4:
        return sf
    if sf <= k1:
        return sp
    # Both in transition zones: compare positions relative to the zone sizes,
    # exactly, by cross-multiplying with the positive zone widths.
    if (sp - k3) * (k2 - k1) < (k2 - sf) * (k4 - k3):
        return sp
    return sf


def _column_shifts(
    indices: np.ndarray, action_frames: np.ndarray, slicing: Slicing
) -> np.ndarray:
    k1, k2, k3, k4 = slicing
    if action_frames.size == 0:
        return np.full(indices.shape, k1, dtype=np.int64)
    pos = np.searchsorted(action_frames, indices, side="right")
    has_past = pos > 0
    has_future = pos < action_frames.size
    sp = indices - action_frames[np.clip(pos - 1, 0, None)]
    sf = indices - action_frames[np.clip(pos, None, action_frames.size - 1)]
    keep_past = sp < k3
    transition = (sp >= k3) & (sp < k4)
    far_future = sf <= k1
    closer_to_past = (sp - k3) * (k2 - k1) < (k2 - sf) * (k4 - k3)
    keep_past |= transition & (far_future | closer_to_past)
    out = np.where(keep_past, sp, sf)
    out = np.where(has_past & ~has_future, sp, out)
    out = np.where(~has_past & has_future, sf, out)
    return out.astype(np.int64)


def tse_range(
    annotations: VideoAnnotations, cfg: SpottingConfig, start: int, stop: int
) -> np.ndarray:
    """Time-shift columns for frame indices [start, stop).

    Indices may lie outside the video; padded frames carry no annotations but
    still have well-defined shifts relative to the real actions.
    """
    indices = np.arange(start, stop, dtype=np.int64)
    out = np.empty((stop - start, cfg.num_classes), dtype=np.int64)
    for c in range(cfg.num_classes):
        frames = np.array(annotations.class_actions(c), dtype=np.int64)
        out[:, c] = _column_shifts(indices, frames, cfg.slicing[c])
    return out


def tse_video(annotations: VideoAnnotations, cfg: SpottingConfig) -> TseMap:
    values = tse_range(annotations, cfg, 0, annotations.num_frames)
    frames = tuple(tuple(annotations.class_actions(c)) for c in range(cfg.num_classes))
    return TseMap(values=values, action_frames=frames)


def write_tse_csv(tse_map: TseMap, path: str | Path) -> None:
    num_classes = tse_map.values.shape[1]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["frame_index"] + [f"s_class_{c}" for c in range(num_classes)])
        for i, row in enumerate(tse_map.values):
            writer.writerow([i] + [int(v) for v in row])
