"""Tiered KV-cache management for sparse-attention serving, as a simulator."""
from .core import (
    Config,
    HeadKey,
    ModelShape,
    SparseConfig,
    TierParams,
    load_config,
    validate_config,
)
from .errors import KVTierError

__version__ = "0.1.0"

__all__ = [
    "Config",
    "HeadKey",
    "KVTierError",
    "ModelShape",
    "SparseConfig",
    "TierParams",
    "load_config",
    "validate_config",
]
