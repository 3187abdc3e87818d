"""Invariance-regularized contrastive representation learning at desk scale."""

from .errors import (
    AbortStepError,
    ConfigError,
    ContractError,
    DomainError,
    FormatError,
    RelicError,
    ShapeError,
    StateError,
)

__version__ = "0.1.0"

__all__ = [
    "AbortStepError",
    "ConfigError",
    "ContractError",
    "DomainError",
    "FormatError",
    "RelicError",
    "ShapeError",
    "StateError",
    "__version__",
]
