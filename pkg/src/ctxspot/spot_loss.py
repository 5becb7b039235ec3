"""YOLO-style action encoding, iterative one-to-one matching, spotting loss.

A ground-truth matrix Y has one row per action: presence indicator, location
normalized by the chunk length, then a one-hot class block. Predictions come in
a fixed-size matrix of the same layout with a confidence in the first column.
The matching repeatedly pairs each remaining ground truth with its nearest
remaining prediction; every prediction chosen by at least one ground truth
permanently takes the nearest of its claimants, and the process iterates until
all ground truths are paired.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int], ...]  # (gt_row, pred_row)
    unmatched: tuple[int, ...]          # prediction rows left over


def yolo_encode(
    actions: list[tuple[int, int]], chunk_frames: int, num_classes: int
) -> np.ndarray:
    """Encode (class, frame) actions as rows [1, frame/chunk_frames, one-hot]."""
    rows = np.zeros((len(actions), 2 + num_classes), dtype=np.float64)
    for i, (cls, frame) in enumerate(sorted(actions, key=lambda cf: (cf[1], cf[0]))):
        if not 0 <= cls < num_classes:
            raise ValueError(f"class {cls} outside [0, {num_classes})")
        if not 0 <= frame < chunk_frames:
            raise ValueError(f"frame {frame} outside [0, {chunk_frames})")
        rows[i, 0] = 1.0
        rows[i, 1] = frame / chunk_frames
        rows[i, 2 + cls] = 1.0
    return rows


def iterative_match(gt_locs, pred_locs) -> Matching:
    """Pair every ground-truth location with a prediction, round by round.

    Each round maps every remaining ground truth to its nearest remaining
    prediction; a prediction with claimants takes the nearest one and both
    leave the pool. Distance ties break toward the lower index. Terminates in
    at most len(gt_locs) rounds.
    """
    gt_locs = [float(v) for v in gt_locs]
    pred_locs = [float(v) for v in pred_locs]
    if len(pred_locs) < len(gt_locs):
        raise ValueError(
            f"need at least as many predictions as ground truths "
            f"({len(pred_locs)} < {len(gt_locs)})"
        )
    remaining_gt = list(range(len(gt_locs)))
    remaining_pred = list(range(len(pred_locs)))
    pairs = []
    while remaining_gt:
        nearest_pred = {
            g: min(remaining_pred, key=lambda p: (abs(gt_locs[g] - pred_locs[p]), p))
            for g in remaining_gt
        }
        for p in list(remaining_pred):
            claimants = [g for g in remaining_gt if nearest_pred[g] == p]
            if not claimants:
                continue
            g = min(claimants, key=lambda g: (abs(gt_locs[g] - pred_locs[p]), g))
            pairs.append((g, p))
            remaining_gt.remove(g)
            remaining_pred.remove(p)
    return Matching(pairs=tuple(sorted(pairs)), unmatched=tuple(remaining_pred))


def identity_matching(n_gt: int, n_pred: int) -> Matching:
    """Row-order pairing used when the matching step is ablated."""
    if n_pred < n_gt:
        raise ValueError(f"need at least as many predictions as ground truths")
    return Matching(
        pairs=tuple((i, i) for i in range(n_gt)),
        unmatched=tuple(range(n_gt, n_pred)),
    )


def _check_matching(matching: Matching, n_gt: int, n_pred: int) -> None:
    gt_rows = [g for g, _ in matching.pairs]
    pred_rows = [p for _, p in matching.pairs]
    if sorted(gt_rows) != list(range(n_gt)):
        raise ValueError("matching must cover every ground-truth row exactly once")
    used = pred_rows + list(matching.unmatched)
    if len(set(pred_rows)) != len(pred_rows) or sorted(used) != list(range(n_pred)):
        raise ValueError("matched and unmatched prediction rows must partition the rows")


def spotting_loss(
    y: np.ndarray,
    y_hat: np.ndarray,
    matching: Matching,
    alpha,
    beta: float,
) -> float:
    """Column-weighted squared error over matched rows plus a confidence
    penalty on unmatched predictions."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if y.shape[1] != y_hat.shape[1] or alpha.shape != (y.shape[1],):
        raise ValueError(
            f"column mismatch: Y {y.shape}, predictions {y_hat.shape}, alpha {alpha.shape}"
        )
    _check_matching(matching, y.shape[0], y_hat.shape[0])
    total = 0.0
    for g, p in matching.pairs:
        total += float(np.sum(alpha * (y[g] - y_hat[p]) ** 2))
    for p in matching.unmatched:
        total += beta * float(y_hat[p, 0] ** 2)
    return total


def spotting_grad(
    y: np.ndarray,
    y_hat: np.ndarray,
    matching: Matching,
    alpha,
    beta: float,
) -> np.ndarray:
    """Gradient of spotting_loss with respect to the prediction matrix.

    The matching is treated as constant. Unmatched rows receive gradient only
    through their confidence column.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if y.shape[1] != y_hat.shape[1] or alpha.shape != (y.shape[1],):
        raise ValueError(
            f"column mismatch: Y {y.shape}, predictions {y_hat.shape}, alpha {alpha.shape}"
        )
    _check_matching(matching, y.shape[0], y_hat.shape[0])
    grad = np.zeros_like(y_hat)
    for g, p in matching.pairs:
        grad[p] = -2.0 * alpha * (y[g] - y_hat[p])
    for p in matching.unmatched:
        grad[p, 0] = 2.0 * beta * y_hat[p, 0]
    return grad


def total_loss(spot: float, seg: float, lambda_seg: float) -> float:
    if spot < 0 or seg < 0:
        raise ValueError("loss components must be non-negative")
    return spot + lambda_seg * seg
