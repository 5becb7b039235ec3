"""Action-spotting metrics: tolerance matching, AP, Average-mAP, curves, bins.

A prediction is a (class, frame, confidence) triple and a ground truth a
(class, frame) pair, both on one video timeline. A prediction counts as a true
positive at tolerance ``delta`` (seconds) when it claims an unclaimed ground
truth of its class within delta/2 seconds (the window is the full tolerance
wide); claiming is greedy in order of descending confidence. Average precision
uses all-point interpolation by default, and the Average-mAP is the arithmetic
mean of the class-averaged AP over the tolerance grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Pred = tuple[int, int, float]
Gt = tuple[int, int]

GAME_TIME_BIN_MINUTES = 5
VICINITY_EDGES = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0)


def _half_width(tolerance_seconds: float, window: str) -> float:
    if window == "half":
        return tolerance_seconds / 2.0
    if window == "full":
        return tolerance_seconds
    raise ValueError(f"window must be 'half' or 'full', got {window!r}")


def match_tolerance(
    preds: list[Pred],
    gts: list[Gt],
    tolerance_seconds: float,
    fps: float,
    window: str = "half",
) -> tuple[list[bool], list[int], int]:
    """Label each prediction TP/FP against one timeline.

    Predictions are visited by descending confidence; each claims the nearest
    unclaimed same-class ground truth within the tolerance window. Returns the
    labels in visiting order, the visiting order itself (indices into preds),
    and the count of unclaimed ground truths (false negatives).
    """
    if tolerance_seconds <= 0:
        raise ValueError("tolerance must be positive")
    half = _half_width(tolerance_seconds, window)
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][2], preds[i][1], preds[i][0], i))
    claimed: set[int] = set()
    labels: list[bool] = []
    for i in order:
        cls, frame, _ = preds[i]
        best = None
        for j, (g_cls, g_frame) in enumerate(gts):
            if j in claimed or g_cls != cls:
                continue
            offset = abs(frame - g_frame) / fps
            if offset <= half and (best is None or (offset, g_frame, j) < best):
                best = (offset, g_frame, j)
        if best is None:
            labels.append(False)
        else:
            claimed.add(best[2])
            labels.append(True)
    return labels, order, len(gts) - len(claimed)


def average_precision(labels: list[bool], n_gt: int, mode: str = "all_points"):
    """AP of a confidence-ranked TP/FP sequence against n_gt ground truths.

    Returns None (class skipped) when there is nothing to score, 0.0 when
    predictions exist but no ground truth does.
    """
    if n_gt == 0:
        return 0.0 if labels else None
    if not labels:
        return 0.0
    tp = 0
    precisions = []
    for k, label in enumerate(labels, start=1):
        tp += bool(label)
        precisions.append(tp / k)
    envelope = precisions[:]
    for k in range(len(envelope) - 2, -1, -1):
        envelope[k] = max(envelope[k], envelope[k + 1])
    if mode == "all_points":
        # Recall increments are 1/n_gt exactly at each TP rank.
        return sum(envelope[k] for k, label in enumerate(labels) if label) / n_gt
    if mode == "eleven_point":
        recalls = np.cumsum([bool(l) for l in labels]) / n_gt
        total = 0.0
        for r in np.linspace(0.0, 1.0, 11):
            reachable = [envelope[k] for k in range(len(labels)) if recalls[k] >= r]
            total += max(reachable) if reachable else 0.0
        return total / 11.0
    raise ValueError(f"mode must be 'all_points' or 'eleven_point', got {mode!r}")


def _as_video_dict(preds, gts):
    if isinstance(preds, dict) != isinstance(gts, dict):
        raise ValueError("predictions and ground truths must both be dicts or both lists")
    if isinstance(preds, dict):
        return preds, gts
    return {"": preds}, {"": gts}


def _pooled_class_ap(
    preds_by_video: dict,
    gts_by_video: dict,
    cls: int,
    tolerance_seconds: float,
    fps: float,
    window: str,
    ap_mode: str,
):
    scored: list[tuple[float, bool]] = []
    n_gt = 0
    for video, gts in gts_by_video.items():
        class_gts = [g for g in gts if g[0] == cls]
        class_preds = [p for p in preds_by_video.get(video, []) if p[0] == cls]
        n_gt += len(class_gts)
        labels, order, _ = match_tolerance(class_preds, class_gts, tolerance_seconds, fps, window)
        scored.extend((class_preds[i][2], label) for i, label in zip(order, labels))
    scored.sort(key=lambda cl: -cl[0])
    return average_precision([label for _, label in scored], n_gt, mode=ap_mode)


def _num_classes(preds_by_video, gts_by_video) -> int:
    classes = [p[0] for preds in preds_by_video.values() for p in preds]
    classes += [g[0] for gts in gts_by_video.values() for g in gts]
    return max(classes) + 1 if classes else 0


def dataset_average_map(
    preds,
    gts,
    tolerances,
    fps: float,
    window: str = "half",
    ap_mode: str = "all_points",
    num_classes: int | None = None,
) -> tuple[list[float], float]:
    """Per-tolerance mAP (classes pooled over videos) and its mean."""
    if not tolerances:
        raise ValueError("tolerance set must be non-empty")
    preds_by_video, gts_by_video = _as_video_dict(preds, gts)
    if num_classes is None:
        num_classes = _num_classes(preds_by_video, gts_by_video)
    maps = []
    for tolerance in tolerances:
        aps = []
        for cls in range(num_classes):
            ap = _pooled_class_ap(
                preds_by_video, gts_by_video, cls, tolerance, fps, window, ap_mode
            )
            if ap is not None:
                aps.append(ap)
        maps.append(sum(aps) / len(aps) if aps else 0.0)
    return maps, sum(maps) / len(maps)


def average_map(preds, gts, tolerances, fps, window="half", ap_mode="all_points"):
    """Single-timeline convenience wrapper around dataset_average_map."""
    return dataset_average_map(preds, gts, tolerances, fps, window=window, ap_mode=ap_mode)


def per_class_curves(
    preds,
    gts,
    tolerances,
    fps: float,
    thresholds: dict[int, float] | float = 0.0,
    window: str = "half",
    num_classes: int | None = None,
) -> dict[int, list[dict]]:
    """Precision/recall/F1 per class as the tolerance grows.

    Only predictions at or above the class threshold are scored. With no
    prediction above the threshold, precision is reported as 1 with recall 0.
    """
    preds_by_video, gts_by_video = _as_video_dict(preds, gts)
    if num_classes is None:
        num_classes = _num_classes(preds_by_video, gts_by_video)
    curves: dict[int, list[dict]] = {}
    for cls in range(num_classes):
        threshold = thresholds.get(cls, 0.0) if isinstance(thresholds, dict) else thresholds
        rows = []
        for tolerance in tolerances:
            tp = fp = fn = 0
            for video, gts_list in gts_by_video.items():
                class_gts = [g for g in gts_list if g[0] == cls]
                class_preds = [
                    p
                    for p in preds_by_video.get(video, [])
                    if p[0] == cls and p[2] >= threshold
                ]
                labels, _, misses = match_tolerance(
                    class_preds, class_gts, tolerance, fps, window
                )
                tp += sum(labels)
                fp += len(labels) - sum(labels)
                fn += misses
            precision = tp / (tp + fp) if tp + fp > 0 else 1.0
            recall = tp / (tp + fn) if tp + fn > 0 else 1.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
            rows.append(
                {
                    "tolerance": tolerance,
                    "precision": precision,
                    "recall": recall,
                    "f1": f1,
                    "tp": tp,
                    "fp": fp,
                    "fn": fn,
                }
            )
        curves[cls] = rows
    return curves


def optimize_thresholds(
    preds, gts, tolerances, fps: float, window: str = "half", num_classes: int | None = None
) -> dict[int, float]:
    """Per-class confidence threshold maximizing mean F1 over the tolerances,
    scanned on a 0.01 grid (ties take the lowest threshold)."""
    preds_by_video, gts_by_video = _as_video_dict(preds, gts)
    if num_classes is None:
        num_classes = _num_classes(preds_by_video, gts_by_video)
    best: dict[int, float] = {}
    grid = np.round(np.arange(0.0, 1.0 + 1e-9, 0.01), 2)
    for cls in range(num_classes):
        best_score, best_threshold = -1.0, 0.0
        for threshold in grid:
            curves = per_class_curves(
                preds_by_video,
                gts_by_video,
                tolerances,
                fps,
                thresholds={cls: float(threshold)},
                window=window,
                num_classes=num_classes,
            )[cls]
            score = sum(row["f1"] for row in curves) / len(curves)
            if score > best_score + 1e-12:
                best_score, best_threshold = score, float(threshold)
        best[cls] = best_threshold
    return best


def _nearest_gt(pred: Pred, gts: list[Gt]):
    """Index of the claimed-or-nearest ground truth for bin assignment:
    nearest same-class if any exists, else nearest of any class."""
    if not gts:
        return None
    same = [(abs(pred[1] - g[1]), g[1], j) for j, g in enumerate(gts) if g[0] == pred[0]]
    pool = same if same else [(abs(pred[1] - g[1]), g[1], j) for j, g in enumerate(gts)]
    return min(pool)[2]


def _binned_average_map(preds_by_video, gts_by_video, assign_bin, tolerances, fps, window, ap_mode):
    """Shared machinery: bin ground truths, route predictions to the bin of
    their nearest ground truth, then score each bin on its restriction."""
    bins: dict = {}
    for video, gts in gts_by_video.items():
        gt_bins = [assign_bin(video, g) for g in gts]
        for g, b in zip(gts, gt_bins):
            bins.setdefault(b, ({}, {}))[1].setdefault(video, []).append(g)
        for pred in preds_by_video.get(video, []):
            j = _nearest_gt(pred, gts)
            if j is None:
                continue
            bins.setdefault(gt_bins[j], ({}, {}))[0].setdefault(video, []).append(pred)
    rows = []
    for key in sorted(bins):
        bin_preds, bin_gts = bins[key]
        _, avg = dataset_average_map(
            bin_preds, bin_gts, tolerances, fps, window=window, ap_mode=ap_mode
        )
        count = sum(len(v) for v in bin_gts.values())
        rows.append((key, avg, count))
    return rows


def bin_by_game_time(
    preds,
    gts,
    tolerances,
    fps: float,
    bin_minutes: int = GAME_TIME_BIN_MINUTES,
    window: str = "half",
    ap_mode: str = "all_points",
) -> list[dict]:
    """Average-mAP over non-overlapping game-time bins."""
    preds_by_video, gts_by_video = _as_video_dict(preds, gts)

    def assign(video, gt):
        return int(gt[1] / fps // (bin_minutes * 60))

    rows = _binned_average_map(
        preds_by_video, gts_by_video, assign, tolerances, fps, window, ap_mode
    )
    return [
        {"bin_start_minute": key * bin_minutes, "average_map": avg, "count": count}
        for key, avg, count in rows
    ]


def bin_by_vicinity(
    preds,
    gts,
    tolerances,
    fps: float,
    edges: tuple[float, ...] = VICINITY_EDGES,
    window: str = "half",
    ap_mode: str = "all_points",
) -> list[dict]:
    """Average-mAP binned by each ground truth's distance (seconds) to its
    closest other ground truth of any class; isolated actions land in the last
    bin."""
    preds_by_video, gts_by_video = _as_video_dict(preds, gts)

    def assign(video, gt):
        others = [g for g in gts_by_video[video] if g is not gt]
        if not others:
            return len(edges) - 1
        distance = min(abs(gt[1] - g[1]) for g in others) / fps
        for b in range(len(edges) - 1):
            if edges[b] <= distance < edges[b + 1]:
                return b
        return len(edges) - 1

    rows = _binned_average_map(
        preds_by_video, gts_by_video, assign, tolerances, fps, window, ap_mode
    )
    labelled = []
    for key, avg, count in rows:
        hi = edges[key + 1] if key + 1 < len(edges) else None
        labelled.append(
            {
                "distance_from_seconds": edges[key],
                "distance_to_seconds": hi,
                "average_map": avg,
                "count": count,
            }
        )
    return labelled


@dataclass
class EvalReport:
    tolerances: tuple[float, ...]
    map_per_tolerance: list[float]
    average_map: float
    per_class: dict[int, dict]
    game_time_bins: list[dict]
    vicinity_bins: list[dict]
    conventions: dict
    counts: dict

    def to_dict(self) -> dict:
        return {
            "tolerances": list(self.tolerances),
            "map_per_tolerance": self.map_per_tolerance,
            "average_map": self.average_map,
            "per_class": {str(cls): info for cls, info in self.per_class.items()},
            "game_time_bins": self.game_time_bins,
            "vicinity_bins": self.vicinity_bins,
            "conventions": self.conventions,
            "counts": self.counts,
        }


def build_report(
    preds,
    gts,
    tolerances,
    fps: float,
    num_classes: int | None = None,
    thresholds: dict[int, float] | None = None,
    window: str = "half",
    ap_mode: str = "all_points",
) -> EvalReport:
    """Full evaluation: mAP table, per-class curves, game-time/vicinity bins.

    When no thresholds are supplied they are optimized for F1 on the evaluated
    data itself; the report's conventions block records this.
    """
    preds_by_video, gts_by_video = _as_video_dict(preds, gts)
    if num_classes is None:
        num_classes = _num_classes(preds_by_video, gts_by_video)
    maps, avg = dataset_average_map(
        preds_by_video, gts_by_video, tolerances, fps,
        window=window, ap_mode=ap_mode, num_classes=num_classes,
    )
    threshold_source = "supplied"
    if thresholds is None:
        thresholds = optimize_thresholds(
            preds_by_video, gts_by_video, tolerances, fps,
            window=window, num_classes=num_classes,
        )
        threshold_source = "optimized_on_evaluated_data"
    curves = per_class_curves(
        preds_by_video, gts_by_video, tolerances, fps,
        thresholds=thresholds, window=window, num_classes=num_classes,
    )
    per_class = {}
    for cls in range(num_classes):
        aps = []
        for tolerance in tolerances:
            ap = _pooled_class_ap(
                preds_by_video, gts_by_video, cls, tolerance, fps, window, ap_mode
            )
            aps.append(ap)
        per_class[cls] = {
            "ap_per_tolerance": aps,
            "threshold": thresholds.get(cls, 0.0),
            "curves": curves[cls],
        }
    return EvalReport(
        tolerances=tuple(tolerances),
        map_per_tolerance=maps,
        average_map=avg,
        per_class=per_class,
        game_time_bins=bin_by_game_time(
            preds_by_video, gts_by_video, tolerances, fps, window=window, ap_mode=ap_mode
        ),
        vicinity_bins=bin_by_vicinity(
            preds_by_video, gts_by_video, tolerances, fps, window=window, ap_mode=ap_mode
        ),
        conventions={
            "tolerance_window": window,
            "ap_interpolation": ap_mode,
            "zero_prediction_precision": 1.0,
            "threshold_source": threshold_source,
        },
        counts={
            "predictions": sum(len(v) for v in preds_by_video.values()),
            "ground_truths": sum(len(v) for v in gts_by_video.values()),
            "videos": len(gts_by_video),
        },
    )
