"""Sparse-attention text classification lab."""

from .simplex import (
    MappingKind,
    SupportInfo,
    entmax15,
    entmax_bisect,
    mapping_backward,
    softmax,
    sparsemax,
)

__all__ = [
    "MappingKind",
    "SupportInfo",
    "softmax",
    "sparsemax",
    "entmax15",
    "entmax_bisect",
    "mapping_backward",
]
