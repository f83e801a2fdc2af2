"""Unsupervised building damage detection for bi-temporal satellite imagery.

The engine orchestrates three foundation-model roles (text-prompted
detection, box-prompted segmentation, vision-language scoring) behind a
backend abstraction, composes per-scene damage masks, manufactures
pseudo-labels through a multiscale proposal cascade, and measures
everything with pixel- and object-level metrics.
"""

__version__ = "0.1.0"

from .config import PipelineConfig
from .errors import (
    BackendError,
    BackendProtocolError,
    BackendTransportError,
    ConfigError,
    DamagescanError,
    DataError,
)
from .geometry import BoundingBox, PatchRect, ScoredProposal

__all__ = [
    "BackendError",
    "BackendProtocolError",
    "BackendTransportError",
    "BoundingBox",
    "ConfigError",
    "DamagescanError",
    "DataError",
    "PatchRect",
    "PipelineConfig",
    "ScoredProposal",
    "__version__",
]
