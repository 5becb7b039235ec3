"""Desk-scale temporal network for segmentation scores and spotting predictions.

The network maps a chunk of frame features (chunk_frames x feature_dim) to
per-frame per-class segmentation scores and a fixed number of spotting
prediction rows. Architecture: a frame-wise two-layer MLP, a pyramid of
parallel temporal convolutions with kernel widths derived from the receptive
field (r/7, r/3, r/2, r), a width-3 projection to C*f class features, a
hypercube segmentation head (score = 1 - 2 d / sqrt(f) for the distance d of
the sigmoid feature vector from the cube center), and a spotting head of three
maxpool+conv stages feeding two dense output maps. Gradients come from the
package's own reverse-mode engine.
"""

from __future__ import annotations

import copy
import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import SpottingConfig
from .data import Chunk, FeatureSequence, VideoAnnotations, sample_chunks
from .seg_loss import seg_grad_chunk, seg_loss_chunk
from .spot_loss import (
    identity_matching,
    iterative_match,
    spotting_grad,
    spotting_loss,
    yolo_encode,
)
from .tse import tse_range

STANDARDIZE_EPS = 1e-5
CHECKPOINT_MAGIC = b"CTXSPOT\x00"
CHECKPOINT_VERSION = 1

PYRAMID_DIVISORS = (7, 3, 2, 1)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class CheckpointError(ValueError):
    pass


def pyramid_kernels(receptive_field: int) -> tuple[int, ...]:
    # Kernel widths r/7, r/3, r/2, r rounded to at least one frame.
    return tuple(max(1, round(receptive_field / d)) for d in PYRAMID_DIVISORS)


def seg_score_head(v: np.ndarray) -> np.ndarray:
    """Segmentation score 1 - 2 d / sqrt(f) for vectors v in the open unit cube.

    d is the Euclidean distance of v from the cube center, so the score lies in
    [0, 1] and reaches 1 exactly at the center.
    """
    v = np.asarray(v, dtype=np.float64)
    if not ((v > 0.0) & (v < 1.0)).all():
        raise ValueError("hypercube head expects entries strictly inside (0, 1)")
    f = v.shape[-1]
    dist = np.sqrt(((v - 0.5) ** 2).sum(axis=-1))
    return 1.0 - 2.0 * dist / math.sqrt(f)


class ModelParams:
    """Named parameter tensors in a fixed declaration order."""

    def __init__(self, cfg: SpottingConfig, seed: int | None = None):
        self.config_hash = cfg.config_hash()
        self.version = 0
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        c, f = cfg.num_classes, cfg.class_features
        h1, h2 = cfg.mlp_hidden
        kernels = pyramid_kernels(cfg.receptive_field)
        concat_ch = sum(cfg.pyramid_channels) + h2
        spot_in = c * f + c
        s1, s2 = cfg.spot_channels
        flat = ag.pooled_length(
            ag.pooled_length(ag.pooled_length(cfg.chunk_frames))
        ) * s2

        def dense(fan_in, fan_out, gain=2.0):
            scale = math.sqrt(gain / fan_in)
            return rng.normal(0.0, scale, size=(fan_in, fan_out))

        def conv(k, c_in, c_out, gain=2.0):
            scale = math.sqrt(gain / (k * c_in))
            return rng.normal(0.0, scale, size=(k, c_in, c_out))

        spec: list[tuple[str, np.ndarray]] = [
            ("mlp1_w", dense(cfg.feature_dim, h1)),
            ("mlp1_b", np.zeros(h1)),
            ("mlp2_w", dense(h1, h2)),
            ("mlp2_b", np.zeros(h2)),
        ]
        for i, (k, ch) in enumerate(zip(kernels, cfg.pyramid_channels)):
            spec.append((f"pyr{i}_w", conv(k, h2, ch)))
            spec.append((f"pyr{i}_b", np.zeros(ch)))
        spec += [
            ("proj_w", conv(3, concat_ch, c * f, gain=1.0)),
            ("proj_b", np.zeros(c * f)),
            # Affine for the frame standardization, as in batch normalization;
            # without it the unit variance caps the hypercube-score separation.
            ("seg_gain", np.ones((c, f))),
            # Positive bias starts every frame away from the cube center:
            # scores begin low, matching the background-dominated targets.
            ("seg_bias", np.full((c, f), 2.0)),
            ("spot1_w", conv(3, spot_in, s1)),
            ("spot1_b", np.zeros(s1)),
            ("spot2_w", conv(3, s1, s2)),
            ("spot2_b", np.zeros(s2)),
            ("head_locconf_w", dense(flat, 2 * cfg.num_predictions, gain=1.0)),
            ("head_locconf_b", np.zeros(2 * cfg.num_predictions)),
            ("head_cls_w", dense(flat, c * cfg.num_predictions, gain=1.0)),
            ("head_cls_b", np.zeros(c * cfg.num_predictions)),
        ]
        self._tensors: dict[str, Tensor] = {
            name: Tensor(value, requires_grad=True) for name, value in spec
        }

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def items(self):
        return self._tensors.items()

    def names(self) -> list[str]:
        return list(self._tensors)

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self._tensors.values())

    def copy(self) -> "ModelParams":
        clone = object.__new__(ModelParams)
        clone.config_hash = self.config_hash
        clone.version = self.version
        clone._tensors = {
            name: Tensor(t.data.copy(), requires_grad=True)
            for name, t in self._tensors.items()
        }
        return clone

    def round_to_float32(self) -> None:
        """Round values to float32 precision, as stored in checkpoints."""
        for t in self._tensors.values():
            t.data = t.data.astype(np.float32).astype(np.float64)


@dataclass
class ForwardTrace:
    seg_scores: Tensor   # (B, chunk_frames, C)
    predictions: Tensor  # (B, num_predictions, 2 + C)
    params_version: int


def _check_finite(name: str, value: np.ndarray) -> None:
    if not np.isfinite(value).all():
        raise FloatingPointError(f"non-finite activation in {name}")


def forward(features: np.ndarray, params: ModelParams, cfg: SpottingConfig) -> ForwardTrace:
    """Run a batch of chunks (B, chunk_frames, feature_dim) through the network."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 2:
        features = features[None]
    batch, length, dim = features.shape
    if length != cfg.chunk_frames or dim != cfg.feature_dim:
        raise ValueError(
            f"expected chunks of shape (B, {cfg.chunk_frames}, {cfg.feature_dim}), "
            f"got {features.shape}"
        )
    if params.config_hash != cfg.config_hash():
        raise ValueError("parameters were built for a different configuration")
    c, f = cfg.num_classes, cfg.class_features

    x = Tensor(features)
    h = ag.linear(x, params["mlp1_w"], params["mlp1_b"]).relu()
    h = ag.linear(h, params["mlp2_w"], params["mlp2_b"]).relu()
    levels = [
        ag.conv1d(h, params[f"pyr{i}_w"], params[f"pyr{i}_b"]).relu()
        for i in range(len(PYRAMID_DIVISORS))
    ]
    trunk = ag.concat_last(levels + [h])
    class_feats = ag.conv1d(trunk, params["proj_w"], params["proj_b"])
    _check_finite("temporal trunk", class_feats.data)

    # Segmentation: per-chunk standardization over frames, sigmoid into the
    # unit hypercube, then one minus the normalized distance from its center.
    z = class_feats.reshape(batch, length, c, f)
    mean = z.mean(axis=1)
    centered = z - mean
    var = (centered * centered).mean(axis=1)
    norm = centered / (var + STANDARDIZE_EPS).sqrt_or_zero()
    v = (norm * params["seg_gain"] + params["seg_bias"]).sigmoid()
    half = v - 0.5
    dist = (half * half).sum_last().sqrt_or_zero()
    seg_scores = dist * (-2.0 / math.sqrt(f)) + 1.0
    _check_finite("segmentation head", seg_scores.data)

    spot = ag.concat_last([class_feats.relu(), seg_scores])
    spot = ag.maxpool1d(spot)
    spot = ag.conv1d(spot, params["spot1_w"], params["spot1_b"]).relu()
    spot = ag.maxpool1d(spot)
    spot = ag.conv1d(spot, params["spot2_w"], params["spot2_b"]).relu()
    spot = ag.maxpool1d(spot)
    flat = spot.reshape(batch, spot.data.shape[1] * spot.data.shape[2])
    locconf = ag.linear(flat, params["head_locconf_w"], params["head_locconf_b"])
    locconf = locconf.sigmoid().reshape(batch, cfg.num_predictions, 2)
    cls = ag.linear(flat, params["head_cls_w"], params["head_cls_b"])
    cls = cls.reshape(batch, cfg.num_predictions, c).softmax_last()
    predictions = ag.concat_last([locconf, cls])
    _check_finite("spotting head", predictions.data)

    return ForwardTrace(
        seg_scores=seg_scores, predictions=predictions, params_version=params.version
    )


def backward(
    trace: ForwardTrace,
    seg_grad: np.ndarray,
    prediction_grad: np.ndarray,
    params: ModelParams,
) -> None:
    """Backpropagate loss gradients on both outputs into params' .grad slots."""
    if trace.params_version != params.version:
        raise RuntimeError("stale trace: parameters changed since forward")
    ag.backward_multi(
        [
            (trace.seg_scores, np.asarray(seg_grad, dtype=np.float64)),
            (trace.predictions, np.asarray(prediction_grad, dtype=np.float64)),
        ]
    )


class Adam:
    """Adam with default moment coefficients."""

    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, params: ModelParams, lr: float) -> None:
        self.t += 1
        for name, tensor in params.items():
            g = tensor.grad
            if g is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            tensor.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        params.version += 1


def epoch_learning_rate(cfg: SpottingConfig, epoch: int) -> float:
    if cfg.epochs == 1:
        return cfg.learning_rate_init
    frac = epoch / (cfg.epochs - 1)
    return (1.0 - frac) * cfg.learning_rate_init + frac * cfg.learning_rate_final


def _batch_losses(
    trace: ForwardTrace,
    chunks: list[Chunk],
    shifts: np.ndarray,
    cfg: SpottingConfig,
):
    """Losses and output gradients for one batch; mean over the chunks."""
    batch = len(chunks)
    scores = trace.seg_scores.data
    seg_value = seg_loss_chunk(scores, shifts, cfg.slicing, cfg.margin_max, cfg.margin_min)
    seg_gradient = seg_grad_chunk(scores, shifts, cfg.slicing, cfg.margin_max, cfg.margin_min)

    predictions = trace.predictions.data
    alpha = np.asarray(cfg.alpha)
    spot_value = 0.0
    prediction_grad = np.zeros_like(predictions)
    for b, chunk in enumerate(chunks):
        y = yolo_encode(list(chunk.actions), cfg.chunk_frames, cfg.num_classes)
        if cfg.use_matching:
            matching = iterative_match(y[:, 1], predictions[b, :, 1])
        else:
            matching = identity_matching(y.shape[0], cfg.num_predictions)
        spot_value += spotting_loss(y, predictions[b], matching, alpha, cfg.beta)
        prediction_grad[b] = spotting_grad(y, predictions[b], matching, alpha, cfg.beta)
    spot_value /= batch
    prediction_grad /= batch
    return seg_value, seg_gradient, spot_value, prediction_grad


Video = tuple[FeatureSequence, VideoAnnotations]


def _tse_cache(video: Video, cfg: SpottingConfig) -> tuple[int, np.ndarray]:
    """Shifts for [-chunk_frames, num_frames + chunk_frames) so any sampled
    chunk window can be sliced directly."""
    _, annotations = video
    start = -cfg.chunk_frames
    stop = annotations.num_frames + cfg.chunk_frames
    return start, tse_range(annotations, cfg, start, stop)


def train(
    train_videos: list[Video],
    val_videos: list[Video],
    cfg: SpottingConfig,
    log=None,
) -> tuple[ModelParams, list[dict]]:
    """Train with per-video batches of freshly sampled chunks each epoch.

    Returns the parameters of the best validation epoch (final parameters when
    no validation videos are given) and the per-epoch history. Deterministic
    for a fixed config seed.
    """
    from .metrics import dataset_average_map  # local import to avoid a cycle

    if not train_videos:
        raise ValueError("empty training dataset")
    rng = np.random.default_rng(cfg.seed)
    params = ModelParams(cfg, seed=cfg.seed)
    adam = Adam(params)
    caches = [_tse_cache(video, cfg) for video in train_videos]

    history: list[dict] = []
    best_map = -1.0
    best_params = params.copy()
    for epoch in range(cfg.epochs):
        lr = epoch_learning_rate(cfg, epoch)
        order = rng.permutation(len(train_videos))
        sums = {"total": 0.0, "seg": 0.0, "spot": 0.0}
        batches = 0
        for vi in order:
            features, annotations = train_videos[vi]
            chunks = sample_chunks(annotations, features, cfg, rng)
            if not chunks:
                continue
            feats = np.stack([c.features for c in chunks]).astype(np.float64)
            cache_start, cache = caches[vi]
            shifts = np.stack(
                [
                    cache[c.start - cache_start : c.start - cache_start + cfg.chunk_frames]
                    for c in chunks
                ]
            )
            trace = forward(feats, params, cfg)
            seg_value, seg_gradient, spot_value, prediction_grad = _batch_losses(
                trace, chunks, shifts, cfg
            )
            total = spot_value + cfg.lambda_seg * seg_value
            if not math.isfinite(total):
                raise DivergenceError(epoch, f"non-finite training loss {total}")
            params.zero_grad()
            backward(trace, cfg.lambda_seg * seg_gradient, prediction_grad, params)
            adam.step(params, lr)
            sums["total"] += total
            sums["seg"] += seg_value
            sums["spot"] += spot_value
            batches += 1
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": sums["total"] / max(batches, 1),
            "seg_loss": sums["seg"] / max(batches, 1),
            "spot_loss": sums["spot"] / max(batches, 1),
            "val_average_map": None,
        }
        if val_videos and (epoch % cfg.validate_every == 0 or epoch == cfg.epochs - 1):
            preds, gts = {}, {}
            for features, annotations in val_videos:
                spots, _ = predict_video(features, params, cfg)
                preds[annotations.video_id] = spots
                gts[annotations.video_id] = list(annotations.actions)
            _, avg = dataset_average_map(preds, gts, cfg.tolerances, cfg.fps)
            record["val_average_map"] = avg
            if avg > best_map:
                best_map = avg
                best_params = params.copy()
        history.append(record)
        if log is not None:
            log(record)
    if best_map < 0:
        best_params = params.copy()
    return best_params, history


def dedupe_spots(
    spots: list[tuple[int, int, float]], window_frames: float
) -> list[tuple[int, int, float]]:
    """Keep only the most confident spot per class within the given window."""
    kept: list[tuple[int, int, float]] = []
    for cls, frame, conf in sorted(spots, key=lambda s: (-s[2], s[1], s[0])):
        if any(k_cls == cls and abs(k_frame - frame) < window_frames for k_cls, k_frame, _ in kept):
            continue
        kept.append((cls, frame, conf))
    return sorted(kept, key=lambda s: (s[1], s[0]))


def predict_video(
    features: FeatureSequence | np.ndarray,
    params: ModelParams,
    cfg: SpottingConfig,
    confidence_threshold: float | None = None,
    dedup_window_seconds: float | None = None,
) -> tuple[list[tuple[int, int, float]], np.ndarray]:
    """Spot actions in a full video and return its segmentation curves.

    The video is split into consecutive non-overlapping chunks (the last one
    zero padded), curves are concatenated and truncated to the true length, and
    chunk predictions are pooled, thresholded, and deduplicated per class
    keeping the highest confidence.
    """
    if not params.all_finite():
        raise ValueError("parameters contain non-finite values; model not usable")
    values = features.values if isinstance(features, FeatureSequence) else np.asarray(features)
    length = values.shape[0]
    if length == 0:
        return [], np.zeros((0, cfg.num_classes))
    threshold = cfg.confidence_threshold if confidence_threshold is None else confidence_threshold
    window_s = cfg.dedup_window_seconds if dedup_window_seconds is None else dedup_window_seconds

    n_chunks = math.ceil(length / cfg.chunk_frames)
    batch = np.zeros((n_chunks, cfg.chunk_frames, values.shape[1]), dtype=np.float64)
    starts = []
    for i in range(n_chunks):
        start = i * cfg.chunk_frames
        starts.append(start)
        stop = min(start + cfg.chunk_frames, length)
        batch[i, : stop - start] = values[start:stop]
    trace = forward(batch, params, cfg)
    curves = trace.seg_scores.data.reshape(-1, cfg.num_classes)[:length].copy()

    spots: list[tuple[int, int, float]] = []
    predictions = trace.predictions.data
    for i, start in enumerate(starts):
        for row in predictions[i]:
            conf = float(row[0])
            if conf < threshold:
                continue
            frame = start + int(round(float(row[1]) * cfg.chunk_frames))
            frame = min(max(frame, 0), length - 1)
            cls = int(np.argmax(row[2:]))
            spots.append((cls, frame, conf))
    return dedupe_spots(spots, window_s * cfg.fps), curves


def save_checkpoint(path, params: ModelParams, cfg: SpottingConfig) -> None:
    """Versioned binary: magic, version, config hash, then float32 blocks in
    declaration order, each prefixed with its dimensions."""
    tensors = dict(params.items())
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<I", CHECKPOINT_VERSION))
        handle.write(bytes.fromhex(cfg.config_hash()))
        handle.write(struct.pack("<I", len(tensors)))
        for tensor in tensors.values():
            data = tensor.data.astype("<f4")
            handle.write(struct.pack("<I", data.ndim))
            handle.write(struct.pack(f"<{data.ndim}I", *data.shape))
            handle.write(data.tobytes())


def load_checkpoint(path, cfg: SpottingConfig) -> ModelParams:
    with open(path, "rb") as handle:
        blob = handle.read()
    offset = 0

    def take(n):
        nonlocal offset
        if offset + n > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        piece = blob[offset : offset + n]
        offset += n
        return piece

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a checkpoint file")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    stored_hash = take(32).hex()
    if stored_hash != cfg.config_hash():
        raise CheckpointError(
            f"{path}: checkpoint was written for config {stored_hash[:12]}..., "
            f"current config is {cfg.config_hash()[:12]}..."
        )
    params = ModelParams(cfg, seed=cfg.seed)
    (n_blocks,) = struct.unpack("<I", take(4))
    names = params.names()
    if n_blocks != len(names):
        raise CheckpointError(f"{path}: expected {len(names)} blocks, found {n_blocks}")
    for name in names:
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        expected = params[name].data.shape
        if shape != expected:
            raise CheckpointError(f"{path}: block {name} has shape {shape}, expected {expected}")
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        params[name].data = data.astype(np.float64)
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after parameter blocks")
    return params
