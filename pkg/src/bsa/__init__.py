"""Batched spectral attention: EMA filter-bank attention for linear forecasters."""

from bsa.attention import SpectralAttention
from bsa.errors import CheckpointError, DimensionError, DomainError, ParseError, StateError
from bsa.forecasters import DLinear, RLinear

__all__ = [
    "SpectralAttention",
    "DLinear",
    "RLinear",
    "CheckpointError",
    "DimensionError",
    "DomainError",
    "ParseError",
    "StateError",
]

__version__ = "0.1.0"
