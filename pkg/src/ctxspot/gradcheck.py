"""Finite-difference verification of the analytic gradients.

Two suites: the scalar clamped-loss derivative over random scores, shifts and
slicing tuples (excluding samples too close to a clamp activation boundary),
and an exhaustive sweep over every parameter of a tiny network configuration
against the full training loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .config import SpottingConfig
from .seg_loss import clamped_grad_values, clamped_loss_values, loss_values, _margin_offsets
from .spot_loss import iterative_match, spotting_grad, spotting_loss, yolo_encode

FD_POINT_STEP = 1e-6
FD_POINT_TOL = 1e-6
CLAMP_EXCLUSION = 1e-4
FD_MODEL_STEP = 1e-4
FD_MODEL_TOL = 1e-3


def random_slicing(rng: np.random.Generator) -> tuple[int, int, int, int]:
    k2 = -int(rng.integers(1, 31))
    k1 = k2 - int(rng.integers(1, 41))
    k3 = int(rng.integers(2, 41))
    k4 = k3 + int(rng.integers(1, 61))
    return (k1, k2, k3, k4)


@dataclass
class GradCheckResult:
    checked: int
    worst_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst_rel_err < self.tolerance


def check_point_gradients(
    n_samples: int = 10_000, seed: int = 0, step: float = FD_POINT_STEP
) -> GradCheckResult:
    """Central finite differences against the clamped-loss derivative."""
    rng = np.random.default_rng(seed)
    margins = (0.9, 0.1)
    checked = 0
    worst = 0.0
    while checked < n_samples:
        k = random_slicing(rng)
        remaining = n_samples - checked
        batch = min(remaining * 4, 4096)
        p = rng.uniform(0.01, 0.99, size=batch)
        s = rng.integers(k[0] - 20, k[3] + 21, size=batch)
        # Skip samples whose raw loss sits within the exclusion band of the
        # clamp activation; the subgradient there is one-sided by definition.
        margin_gap = loss_values(p, s, k) + _margin_offsets(s, k, *margins)
        keep = np.abs(margin_gap) > CLAMP_EXCLUSION
        p, s = p[keep][:remaining], s[keep][:remaining]
        if p.size == 0:
            continue
        analytic = clamped_grad_values(p, s, k, *margins)
        fd = (
            clamped_loss_values(p + step, s, k, *margins)
            - clamped_loss_values(p - step, s, k, *margins)
        ) / (2 * step)
        rel = np.abs(analytic - fd) / np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-3)
        worst = max(worst, float(rel.max()))
        checked += p.size
    return GradCheckResult(checked=checked, worst_rel_err=worst, tolerance=FD_POINT_TOL)


def tiny_config(seed: int = 4) -> SpottingConfig:
    return SpottingConfig(
        num_classes=2,
        chunk_frames=8,
        feature_dim=4,
        class_features=4,
        receptive_field=4,
        num_predictions=2,
        mlp_hidden=(6, 4),
        pyramid_channels=(2, 2, 4, 4),
        spot_channels=(6, 4),
        slicing=((-3, -1, 2, 4), (-3, -1, 2, 4)),
        epochs=2,
        tolerances=(2, 4),
        seed=seed,
    )


def _tiny_batch(cfg: SpottingConfig, seed: int):
    rng = np.random.default_rng(seed)
    batch = 2
    features = rng.normal(size=(batch, cfg.chunk_frames, cfg.feature_dim))
    shifts = rng.integers(
        cfg.slicing[0][0] - 2, cfg.slicing[0][3] + 3, size=(batch, cfg.chunk_frames, cfg.num_classes)
    )
    actions = [[(0, 2)], [(1, 5), (0, 1)]]
    return features, shifts, actions


def _total_loss(params, features, shifts, actions, cfg) -> float:
    from .seg_loss import seg_loss_chunk

    trace = model_mod.forward(features, params, cfg)
    seg = seg_loss_chunk(
        trace.seg_scores.data, shifts, cfg.slicing, cfg.margin_max, cfg.margin_min
    )
    alpha = np.asarray(cfg.alpha)
    spot = 0.0
    for b, chunk_actions in enumerate(actions):
        y = yolo_encode(chunk_actions, cfg.chunk_frames, cfg.num_classes)
        matching = iterative_match(y[:, 1], trace.predictions.data[b, :, 1])
        spot += spotting_loss(y, trace.predictions.data[b], matching, alpha, cfg.beta)
    spot /= len(actions)
    return spot + cfg.lambda_seg * seg


def check_model_gradients(seed: int = 4) -> GradCheckResult:
    """Sweep every parameter entry of the tiny configuration.

    Weights are rounded to float32 first (matching checkpoint storage) and the
    finite differences run in float64.
    """
    from .seg_loss import seg_grad_chunk

    cfg = tiny_config(seed)
    params = model_mod.ModelParams(cfg, seed=seed)
    params.round_to_float32()
    features, shifts, actions = _tiny_batch(cfg, seed + 1)

    trace = model_mod.forward(features, params, cfg)
    seg_gradient = seg_grad_chunk(
        trace.seg_scores.data, shifts, cfg.slicing, cfg.margin_max, cfg.margin_min
    )
    alpha = np.asarray(cfg.alpha)
    prediction_grad = np.zeros_like(trace.predictions.data)
    for b, chunk_actions in enumerate(actions):
        y = yolo_encode(chunk_actions, cfg.chunk_frames, cfg.num_classes)
        matching = iterative_match(y[:, 1], trace.predictions.data[b, :, 1])
        prediction_grad[b] = spotting_grad(
            y, trace.predictions.data[b], matching, alpha, cfg.beta
        )
    prediction_grad /= len(actions)
    params.zero_grad()
    model_mod.backward(trace, cfg.lambda_seg * seg_gradient, prediction_grad, params)

    worst = 0.0
    checked = 0
    for name, tensor in params.items():
        analytic = np.zeros_like(tensor.data) if tensor.grad is None else tensor.grad
        flat = tensor.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + FD_MODEL_STEP
            plus = _total_loss(params, features, shifts, actions, cfg)
            flat[i] = original - FD_MODEL_STEP
            minus = _total_loss(params, features, shifts, actions, cfg)
            flat[i] = original
            fd = (plus - minus) / (2 * FD_MODEL_STEP)
            a = analytic.reshape(-1)[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-3)
            worst = max(worst, rel)
            checked += 1
    return GradCheckResult(checked=checked, worst_rel_err=worst, tolerance=FD_MODEL_TOL)
