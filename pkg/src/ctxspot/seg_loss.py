"""Context-aware temporal segmentation loss.

For a segmentation score ``p`` in [0, 1] and a time-shift ``s`` (frames) the
raw loss is piecewise in ``s`` over the context-slicing zones (K1..K4):

    s <= K1          -ln(1 - p)                      far before
    K1 < s <= K2     -ln(1 - (K2-s)/(K2-K1) * p)     transition in
    K2 < s < 0       0                               just before
    0 <= s < K3      -ln(s/K3 + (K3-s)/K3 * p)       just after
    K3 <= s < K4     -ln(1 - (s-K3)/(K4-K3) * p)     transition out
    s >= K4          -ln(1 - p)                      far after

The margin clamp zeroes the loss for satisfying scores: scores above
``margin_max`` in the just-after zone, scores below ``margin_min`` elsewhere.
Each piece is singular at exactly one end of the score range, so the score is
guarded one-sidedly before the logarithm (p <= 1 - EPS_P in the -ln(1 - a p)
pieces, p >= EPS_P in the just-after piece); the analytic derivative is
evaluated at the guarded score. All arithmetic is 64-bit.
"""

from __future__ import annotations

import numpy as np

from .config import Slicing, validate_slicing

EPS_P = 1e-7


def _pieces(s: np.ndarray, k: Slicing):
    k1, k2, k3, k4 = k
    m_far = (s <= k1) | (s >= k4)
    m_in = (s > k1) & (s <= k2)
    m_after = (s >= 0) & (s < k3)
    m_out = (s >= k3) & (s < k4)
    return m_far, m_in, m_after, m_out


def _raw_loss(p: np.ndarray, s: np.ndarray, k: Slicing) -> np.ndarray:
    k1, k2, k3, k4 = k
    out = np.zeros(np.broadcast(p, s).shape, dtype=np.float64)
    p, s = np.broadcast_to(p, out.shape), np.broadcast_to(s, out.shape)
    hi = np.minimum(p, 1.0 - EPS_P)  # -ln(1 - a p) pieces blow up at p = 1
    lo = np.maximum(p, EPS_P)        # just-after piece blows up at (p = 0, s = 0)
    m_far, m_in, m_after, m_out = _pieces(s, k)
    out[m_far] = -np.log1p(-hi[m_far])
    if m_in.any():
        coef = (k2 - s[m_in]) / (k2 - k1)
        out[m_in] = -np.log1p(-coef * hi[m_in])
    if m_after.any():
        t = s[m_after] / k3
        out[m_after] = -np.log(t + (1.0 - t) * lo[m_after])
    if m_out.any():
        coef = (s[m_out] - k3) / (k4 - k3)
        out[m_out] = -np.log1p(-coef * hi[m_out])
    return out


def _raw_grad(p: np.ndarray, s: np.ndarray, k: Slicing) -> np.ndarray:
    k1, k2, k3, k4 = k
    out = np.zeros(np.broadcast(p, s).shape, dtype=np.float64)
    p, s = np.broadcast_to(p, out.shape), np.broadcast_to(s, out.shape)
    hi = np.minimum(p, 1.0 - EPS_P)
    lo = np.maximum(p, EPS_P)
    m_far, m_in, m_after, m_out = _pieces(s, k)
    out[m_far] = 1.0 / (1.0 - hi[m_far])
    if m_in.any():
        coef = (k2 - s[m_in]) / (k2 - k1)
        out[m_in] = coef / (1.0 - coef * hi[m_in])
    if m_after.any():
        t = s[m_after] / k3
        out[m_after] = -(1.0 - t) / (t + (1.0 - t) * lo[m_after])
    if m_out.any():
        coef = (s[m_out] - k3) / (k4 - k3)
        out[m_out] = coef / (1.0 - coef * hi[m_out])
    return out


def _margin_offsets(s: np.ndarray, k: Slicing, margin_max: float, margin_min: float):
    """ln(margin) added before clamping: margin_max just after, else 1-margin_min."""
    k3 = k[2]
    just_after = (s >= 0) & (s < k3)
    return np.where(just_after, np.log(margin_max), np.log1p(-margin_min))


def loss_values(p: np.ndarray, s: np.ndarray, k: Slicing) -> np.ndarray:
    """Vectorized raw loss for arrays of scores and shifts."""
    validate_slicing(k, allow_degenerate=True)
    return _raw_loss(np.asarray(p, dtype=np.float64), np.asarray(s), k)


def clamped_loss_values(
    p: np.ndarray, s: np.ndarray, k: Slicing, margin_max: float, margin_min: float
) -> np.ndarray:
    validate_slicing(k, allow_degenerate=True)
    p = np.asarray(p, dtype=np.float64)
    s = np.asarray(s)
    raw = _raw_loss(p, s, k)
    return np.maximum(0.0, raw + _margin_offsets(s, k, margin_max, margin_min))


def clamped_grad_values(
    p: np.ndarray, s: np.ndarray, k: Slicing, margin_max: float, margin_min: float
) -> np.ndarray:
    """Derivative of the clamped loss; exactly zero where the clamp is active."""
    validate_slicing(k, allow_degenerate=True)
    p = np.asarray(p, dtype=np.float64)
    s = np.asarray(s)
    raw = _raw_loss(p, s, k)
    active = raw + _margin_offsets(s, k, margin_max, margin_min) > 0.0
    return np.where(active, _raw_grad(p, s, k), 0.0)


def _check_p(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"segmentation score must be in [0, 1], got {p}")


def loss_point(p: float, s: int, slicing: Slicing) -> float:
    _check_p(p)
    return float(loss_values(p, s, slicing))


def loss_point_clamped(
    p: float, s: int, slicing: Slicing, margin_max: float, margin_min: float
) -> float:
    _check_p(p)
    return float(clamped_loss_values(p, s, slicing, margin_max, margin_min))


def grad_point(
    p: float, s: int, slicing: Slicing, margin_max: float, margin_min: float
) -> float:
    _check_p(p)
    return float(clamped_grad_values(p, s, slicing, margin_max, margin_min))


def seg_loss_chunk(
    scores: np.ndarray,
    shifts: np.ndarray,
    slicing: tuple[Slicing, ...],
    margin_max: float,
    margin_min: float,
) -> float:
    """Mean clamped loss over all (frame, class) entries of one chunk."""
    scores = np.asarray(scores, dtype=np.float64)
    shifts = np.asarray(shifts)
    if scores.shape != shifts.shape:
        raise ValueError(f"shape mismatch: scores {scores.shape} vs shifts {shifts.shape}")
    if scores.shape[-1] != len(slicing):
        raise ValueError(
            f"{scores.shape[-1]} score columns but {len(slicing)} slicing tuples"
        )
    total = 0.0
    for c, k in enumerate(slicing):
        total += float(
            clamped_loss_values(scores[..., c], shifts[..., c], k, margin_max, margin_min).sum()
        )
    return total / scores.size


def seg_grad_chunk(
    scores: np.ndarray,
    shifts: np.ndarray,
    slicing: tuple[Slicing, ...],
    margin_max: float,
    margin_min: float,
) -> np.ndarray:
    """Gradient of seg_loss_chunk with respect to every score entry."""
    scores = np.asarray(scores, dtype=np.float64)
    shifts = np.asarray(shifts)
    if scores.shape != shifts.shape:
        raise ValueError(f"shape mismatch: scores {scores.shape} vs shifts {shifts.shape}")
    grad = np.empty_like(scores)
    for c, k in enumerate(slicing):
        grad[..., c] = clamped_grad_values(
            scores[..., c], shifts[..., c], k, margin_max, margin_min
        )
    return grad / scores.size
