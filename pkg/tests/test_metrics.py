"""Metric suite against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxspot.metrics import (
    average_map,
    average_precision,
    bin_by_game_time,
    bin_by_vicinity,
    build_report,
    dataset_average_map,
    match_tolerance,
    optimize_thresholds,
    per_class_curves,
)

FPS = 2.0
DELTAS = (5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60)


def brute_force_ap(labels, n_gt):
    """Independent PR construction: precision envelope via an O(n^2) scan."""
    if n_gt == 0:
        return 0.0 if labels else None
    precisions = []
    tp = 0
    for k, label in enumerate(labels, start=1):
        tp += bool(label)
        precisions.append(tp / k)
    total = 0.0
    for k, label in enumerate(labels):
        if label:
            total += max(precisions[k:])
    return total / n_gt


def test_match_tolerance_perfect():
    gts = [(0, 100), (1, 50)]
    preds = [(0, 100, 0.9), (1, 50, 0.8)]
    labels, order, fn = match_tolerance(preds, gts, 10, FPS)
    assert labels == [True, True] and fn == 0


def test_match_tolerance_window_width():
    # Ground truth at 100 s (frame 200 at 2 fps); tolerance 20 s covers +-10 s.
    gts = [(0, 200)]
    preds = [(0, 204, 0.9), (0, 280, 0.8)]  # 102 s and 140 s
    labels, order, fn = match_tolerance(preds, gts, 20, FPS)
    assert labels == [True, False] and fn == 0
    # Tolerance 5 s covers +-2.5 s; a 4 s offset is out.
    labels, order, fn = match_tolerance([(0, 208, 0.9)], gts, 5, FPS)
    assert labels == [False] and fn == 1


def test_match_tolerance_one_to_one():
    gts = [(0, 100)]
    preds = [(0, 101, 0.9), (0, 99, 0.8)]
    labels, order, fn = match_tolerance(preds, gts, 60, FPS)
    assert labels == [True, False] and fn == 0


def test_average_precision_worked_cases():
    assert average_precision([True], 1) == 1.0
    assert average_precision([True, False], 1) == 1.0
    assert average_precision([False, True], 1) == 0.5
    assert average_precision([], 0) is None
    assert average_precision([False], 0) == 0.0


def test_average_precision_matches_brute_force_exactly():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n_gt = int(rng.integers(0, 7))
        n = int(rng.integers(0, 11))
        labels = list(rng.random(n) < 0.5)
        if n_gt:
            labels = [l if sum(labels[:i]) < n_gt else False for i, l in enumerate(labels)]
        expected = brute_force_ap(labels, n_gt)
        got = average_precision(labels, n_gt)
        assert got == expected


def test_average_map_perfect_is_exactly_one():
    gts = [(0, 40), (1, 200), (2, 333), (0, 90)]
    preds = [(c, f, 0.9) for c, f in gts]
    maps, avg = average_map(preds, gts, DELTAS, FPS)
    assert avg == 1.0
    assert all(m == 1.0 for m in maps)


def test_average_map_no_predictions():
    _, avg = average_map([], [(0, 40)], DELTAS, FPS)
    assert avg == 0.0


def test_average_map_against_oracle_sweep():
    gts = [(0, 200)]
    preds = [(0, 204, 0.9), (0, 280, 0.8)]
    maps, avg = average_map(preds, gts, DELTAS, FPS)
    expected = []
    for delta in DELTAS:
        labels, _, _ = match_tolerance(preds, gts, delta, FPS)
        expected.append(brute_force_ap(labels, 1))
    assert maps == expected
    assert avg == sum(expected) / len(expected)


def test_tolerance_monotonicity_random_instances():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n_classes = int(rng.integers(1, 4))
        n_gt = int(rng.integers(1, 7))
        n_pred = int(rng.integers(0, 11))
        gts = [(int(rng.integers(n_classes)), int(rng.integers(0, 600))) for _ in range(n_gt)]
        preds = [
            (int(rng.integers(n_classes)), int(rng.integers(0, 600)), float(rng.random()))
            for _ in range(n_pred)
        ]
        maps, _ = average_map(preds, gts, DELTAS, FPS)
        assert all(a <= b + 1e-12 for a, b in zip(maps, maps[1:])), (gts, preds, maps)


def test_translation_invariance():
    rng = np.random.default_rng(5)
    gts = [(0, 100), (1, 300), (0, 452)]
    preds = [(0, 104, 0.9), (1, 290, 0.7), (0, 460, 0.8), (2, 40, 0.6)]
    base = average_map(preds, gts, DELTAS, FPS)
    shift = 731
    moved = average_map(
        [(c, f + shift, conf) for c, f, conf in preds],
        [(c, f + shift) for c, f in gts],
        DELTAS,
        FPS,
    )
    assert moved == base


def test_per_class_curves_perfect():
    gts = [(0, 100), (1, 300)]
    preds = [(0, 100, 0.9), (1, 300, 0.9)]
    curves = per_class_curves(preds, gts, DELTAS, FPS, thresholds=0.5)
    for cls in (0, 1):
        for row in curves[cls]:
            assert row["precision"] == 1.0 and row["recall"] == 1.0 and row["f1"] == 1.0


def test_per_class_curves_zero_prediction_convention():
    curves = per_class_curves([], [(0, 100)], (20,), FPS, thresholds=0.5)
    row = curves[0][0]
    assert row["precision"] == 1.0 and row["recall"] == 0.0 and row["f1"] == 0.0


def test_per_class_curves_hand_case():
    gts = [(0, 200)]
    preds = [(0, 204, 0.9), (0, 280, 0.8)]
    row = per_class_curves(preds, gts, (20,), FPS, thresholds=0.0)[0][0]
    assert row["precision"] == 0.5
    assert row["recall"] == 1.0
    assert row["f1"] == pytest.approx(2 / 3)


def test_optimize_thresholds_prunes_noise():
    gts = [(0, 100), (0, 300)]
    preds = [(0, 100, 0.9), (0, 300, 0.85), (0, 500, 0.2), (0, 40, 0.1)]
    thresholds = optimize_thresholds(preds, gts, DELTAS, FPS)
    assert 0.2 < thresholds[0] <= 0.85


def _restriction_oracle(bins, rows, key):
    for row in rows:
        bin_preds, bin_gts = bins[row[key]]
        _, expected = dataset_average_map(bin_preds, bin_gts, DELTAS, FPS)
        assert row["average_map"] == expected


def test_game_time_bins_perfect_and_partition():
    gts = {"v": [(0, 100), (1, 1300), (0, 1250)]}
    preds = {"v": [(0, 100, 0.9), (1, 1300, 0.9), (0, 1250, 0.8)]}
    rows = bin_by_game_time(preds, gts, DELTAS, FPS, bin_minutes=5)
    assert [r["bin_start_minute"] for r in rows] == [0, 10]
    assert all(r["average_map"] == 1.0 for r in rows)
    assert sum(r["count"] for r in rows) == 3


def test_game_time_bins_restriction_oracle():
    rng = np.random.default_rng(8)
    gts = {"v": [(int(rng.integers(2)), int(rng.integers(0, 3600))) for _ in range(8)]}
    preds = {
        "v": [
            (c, max(0, f + int(rng.integers(-30, 30))), float(rng.random()))
            for c, f in gts["v"]
        ]
    }
    rows = bin_by_game_time(preds, gts, DELTAS, FPS, bin_minutes=5)
    assert sum(r["count"] for r in rows) == 8
    # Rebuild each bin by hand and recompute.
    for row in rows:
        bin_idx = row["bin_start_minute"] // 5
        bin_gts = [g for g in gts["v"] if int(g[1] / FPS // 300) == bin_idx]
        bin_preds = []
        for p in preds["v"]:
            same = [g for g in gts["v"] if g[0] == p[0]]
            pool = same if same else gts["v"]
            nearest = min(pool, key=lambda g: (abs(p[1] - g[1]), g[1]))
            if int(nearest[1] / FPS // 300) == bin_idx:
                bin_preds.append(p)
        _, expected = dataset_average_map({"v": bin_preds}, {"v": bin_gts}, DELTAS, FPS)
        assert row["average_map"] == expected


def test_vicinity_bins():
    gts = {"v": [(0, 100), (1, 116), (2, 2000)]}  # 8 s pair and an isolated action
    preds = {"v": [(c, f, 0.9) for c, f in gts["v"]]}
    rows = bin_by_vicinity(preds, gts, DELTAS, FPS)
    by_range = {r["distance_from_seconds"]: r for r in rows}
    assert by_range[0.0]["count"] == 2          # the 8 s pair
    assert by_range[60.0]["count"] == 1         # isolated action in the last bin
    assert by_range[60.0]["distance_to_seconds"] is None
    assert sum(r["count"] for r in rows) == 3


def test_build_report_structure():
    gts = {"v": [(0, 100), (1, 300)]}
    preds = {"v": [(0, 102, 0.9), (1, 290, 0.8), (2, 50, 0.4)]}
    report = build_report(preds, gts, DELTAS, FPS, num_classes=3)
    payload = report.to_dict()
    assert set(payload) == {
        "tolerances", "map_per_tolerance", "average_map", "per_class",
        "game_time_bins", "vicinity_bins", "conventions", "counts",
    }
    assert payload["counts"] == {"predictions": 3, "ground_truths": 2, "videos": 1}
    assert len(payload["per_class"]) == 3
    assert 0.0 <= payload["average_map"] <= 1.0


def test_eleven_point_mode_flag():
    labels = [False, True]
    assert average_precision(labels, 1, mode="eleven_point") == pytest.approx(
        sum([0.5] * 11) / 11
    )


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=5))
def test_dataset_pooling_matches_single_video_when_disjoint(n):
    # Splitting one timeline into separately named videos with identical
    # content must not change pooled AP at any tolerance.
    gts = [(0, 100 * (i + 1)) for i in range(n)]
    preds = [(0, 100 * (i + 1) + 2, 0.5 + 0.01 * i) for i in range(n)]
    single = average_map(preds, gts, DELTAS, FPS)
    multi = dataset_average_map(
        {f"v{i}": [preds[i]] for i in range(n)},
        {f"v{i}": [gts[i]] for i in range(n)},
        DELTAS,
        FPS,
    )
    assert single == multi
