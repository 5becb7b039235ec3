"""Context-aware temporal segmentation and action spotting toolkit."""

__version__ = "0.1.0"

from .config import SpottingConfig, ConfigError, DEFAULT_SLICING, DEFAULT_TOLERANCES

__all__ = [
    "SpottingConfig",
    "ConfigError",
    "DEFAULT_SLICING",
    "DEFAULT_TOLERANCES",
    "__version__",
]
