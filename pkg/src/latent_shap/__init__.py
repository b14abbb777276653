"""Shapley-value explanations of black-box classifiers over semantic latent features."""

from .shapley import (
    Attribution,
    Coalition,
    ValueFunction,
    efficiency_gap,
    exact_shapley,
    mc_shapley,
)

__all__ = [
    "Attribution",
    "Coalition",
    "ValueFunction",
    "efficiency_gap",
    "exact_shapley",
    "mc_shapley",
]

__version__ = "0.1.0"
