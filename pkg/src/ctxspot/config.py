"""Pipeline configuration with the tuned defaults of the trained system.

All temporal quantities in :class:`SpottingConfig` are expressed in frames at
the configured frame rate; metric tolerances are in seconds. Config files may
specify ``slicing_seconds`` instead of ``slicing`` and the values are converted
to frames by multiplying with ``fps``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

Slicing = tuple[int, int, int, int]

# Per-class context slicing in frames at 2 fps: goals, cards, substitutions.
DEFAULT_SLICING: tuple[Slicing, ...] = (
    (-40, -20, 120, 180),
    (-40, -20, 20, 40),
    (-80, -40, 20, 40),
)

DEFAULT_TOLERANCES: tuple[float, ...] = (5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60)


class ConfigError(ValueError):
    """A configuration value violates its invariants."""


@dataclass(frozen=True)
class SpottingConfig:
    """Hyperparameters for encoding, losses, the network and the metrics."""

    num_classes: int = 3
    chunk_frames: int = 240
    fps: float = 2.0
    num_predictions: int = 5
    # Context slicing (frames). None selects the 3-class defaults above.
    slicing: tuple[Slicing, ...] | None = None
    margin_max: float = 0.9
    margin_min: float = 0.1
    # Weights over the 2+C prediction columns. None means 1 everywhere except
    # weight 5 on the location column.
    alpha: tuple[float, ...] | None = None
    beta: float = 0.5
    lambda_seg: float = 1.5
    class_features: int = 16
    receptive_field: int = 80
    feature_dim: int = 16
    mlp_hidden: tuple[int, int] = (32, 16)
    pyramid_channels: tuple[int, int, int, int] = (4, 8, 16, 32)
    spot_channels: tuple[int, int] = (16, 8)
    learning_rate_init: float = 1e-3
    learning_rate_final: float = 1e-6
    epochs: int = 300
    tolerances: tuple[float, ...] = DEFAULT_TOLERANCES
    confidence_threshold: float = 0.5
    dedup_window_seconds: float = 10.0
    validate_every: int = 1
    # Ablation switches: identity pairing instead of iterative matching, and
    # degenerate slicing tuples (K1 == K2, K3 == K4) for raw binary targets.
    use_matching: bool = True
    allow_degenerate_slicing: bool = False
    seed: int = 42

    def __post_init__(self):
        if self.slicing is None:
            if self.num_classes != len(DEFAULT_SLICING):
                raise ConfigError(
                    "slicing must be given explicitly when num_classes != "
                    f"{len(DEFAULT_SLICING)}"
                )
            object.__setattr__(self, "slicing", DEFAULT_SLICING)
        else:
            object.__setattr__(
                self, "slicing", tuple(tuple(int(v) for v in k) for k in self.slicing)
            )
        if self.alpha is None:
            a = [1.0] * (2 + self.num_classes)
            a[1] = 5.0
            object.__setattr__(self, "alpha", tuple(a))
        else:
            object.__setattr__(self, "alpha", tuple(float(v) for v in self.alpha))
        object.__setattr__(self, "tolerances", tuple(float(t) for t in self.tolerances))
        self._validate()

    def _validate(self):
        def positive(name, value):
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")

        positive("num_classes", self.num_classes)
        positive("chunk_frames", self.chunk_frames)
        positive("num_predictions", self.num_predictions)
        positive("class_features", self.class_features)
        positive("receptive_field", self.receptive_field)
        positive("feature_dim", self.feature_dim)
        positive("epochs", self.epochs)
        positive("validate_every", self.validate_every)
        if self.fps <= 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if len(self.slicing) != self.num_classes:
            raise ConfigError(
                f"slicing has {len(self.slicing)} tuples for {self.num_classes} classes"
            )
        for c, k in enumerate(self.slicing):
            if len(k) != 4:
                raise ConfigError(f"slicing[{c}] must have 4 entries, got {k}")
            validate_slicing(k, allow_degenerate=self.allow_degenerate_slicing)
        if not 0 < self.margin_max <= 1:
            raise ConfigError(f"margin_max must be in (0, 1], got {self.margin_max}")
        if not 0 <= self.margin_min < 1:
            raise ConfigError(f"margin_min must be in [0, 1), got {self.margin_min}")
        if self.margin_min >= self.margin_max:
            raise ConfigError("margin_min must be smaller than margin_max")
        if len(self.alpha) != 2 + self.num_classes:
            raise ConfigError(
                f"alpha must have 2+C={2 + self.num_classes} entries, got {len(self.alpha)}"
            )
        if any(a < 0 for a in self.alpha):
            raise ConfigError("alpha entries must be non-negative")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if self.lambda_seg < 0:
            raise ConfigError("lambda_seg must be non-negative")
        if not self.tolerances:
            raise ConfigError("tolerances must be non-empty")
        if any(t <= 0 for t in self.tolerances):
            raise ConfigError("tolerances must be positive")
        if list(self.tolerances) != sorted(self.tolerances):
            raise ConfigError("tolerances must be ascending")
        if not 0 <= self.confidence_threshold <= 1:
            raise ConfigError("confidence_threshold must be in [0, 1]")
        if self.dedup_window_seconds < 0:
            raise ConfigError("dedup_window_seconds must be non-negative")
        if len(self.mlp_hidden) != 2 or any(h < 1 for h in self.mlp_hidden):
            raise ConfigError("mlp_hidden must be two positive sizes")
        if len(self.pyramid_channels) != 4 or any(c < 1 for c in self.pyramid_channels):
            raise ConfigError("pyramid_channels must be four positive sizes")
        if len(self.spot_channels) != 2 or any(c < 1 for c in self.spot_channels):
            raise ConfigError("spot_channels must be two positive sizes")

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "SpottingConfig":
        raw = dict(raw)
        unknown = set(raw) - set(cls.__dataclass_fields__) - {"slicing_seconds"}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "slicing_seconds" in raw:
            if "slicing" in raw and raw["slicing"] is not None:
                raise ConfigError("give either slicing or slicing_seconds, not both")
            fps = raw.get("fps", cls.fps)
            raw["slicing"] = [
                [int(round(v * fps)) for v in k] for k in raw.pop("slicing_seconds")
            ]
        for key in ("slicing", "alpha", "tolerances", "mlp_hidden",
                    "pyramid_channels", "spot_channels"):
            if key in raw and raw[key] is not None:
                raw[key] = tuple(
                    tuple(v) if isinstance(v, (list, tuple)) else v for v in raw[key]
                )
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "SpottingConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def with_overrides(self, **kwargs) -> "SpottingConfig":
        return replace(self, **kwargs)


def validate_slicing(k: Slicing, allow_degenerate: bool = False) -> None:
    """Check K1 < K2 < 0 < K3 < K4 (non-strict outer pairs when degenerate)."""
    k1, k2, k3, k4 = k
    if allow_degenerate:
        ok = k1 <= k2 < 0 < k3 <= k4
    else:
        ok = k1 < k2 < 0 < k3 < k4
    if not ok:
        raise ConfigError(f"invalid slicing tuple {k}: need K1 < K2 < 0 < K3 < K4")
