"""Electromagnetic side-channel activity classification with cross-device transfer."""

__version__ = "0.1.0"

from .errors import (
    ArgumentError,
    ConflictError,
    ContractError,
    DataError,
    EmscaError,
    FormatError,
    InsufficientDataError,
    SchemaError,
    ShapeError,
    TrainingError,
)

__all__ = [
    "ArgumentError", "ConflictError", "ContractError", "DataError", "EmscaError",
    "FormatError", "InsufficientDataError", "SchemaError", "ShapeError", "TrainingError",
]
