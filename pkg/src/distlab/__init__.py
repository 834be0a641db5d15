"""Distributional contextual bandits and reinforcement learning on finite grids."""

from .dist_core import (
    GridCategorical,
    GridMismatchError,
    GridSpec,
    NormalizationError,
    convolve,
    d_triangle,
    hellinger_sq,
    kl_div,
    mean,
    mixture,
    tv_dist,
)
from .errors import AlgorithmFailure, InstanceTooLarge
from .rng import make_rng

__version__ = "0.1.0"

__all__ = [
    "AlgorithmFailure",
    "GridCategorical",
    "GridMismatchError",
    "GridSpec",
    "InstanceTooLarge",
    "NormalizationError",
    "convolve",
    "d_triangle",
    "hellinger_sq",
    "kl_div",
    "make_rng",
    "mean",
    "mixture",
    "tv_dist",
]
