"""Calibration-time rank allocation for low-rank adapters.

Estimate per-module task informativeness from the empirical Fisher diagonal
of adapter-B gradients over a handful of calibration batches, solve a
budget-constrained integer rank allocation, and emit a resized adapter
configuration.
"""
from lorank.backend import BACKEND
from lorank.linalg import Matrix, Rng

__version__ = "0.1.0"

__all__ = ["BACKEND", "Matrix", "Rng", "__version__"]
