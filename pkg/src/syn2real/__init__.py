"""Extractor-autoencoder toolkit for synthetic-to-real latent evaluation."""

from .errors import (
    ConfigError,
    DataError,
    FormatError,
    NumericError,
    ShapeError,
    Syn2RealError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "FormatError",
    "NumericError",
    "ShapeError",
    "Syn2RealError",
    "__version__",
]
