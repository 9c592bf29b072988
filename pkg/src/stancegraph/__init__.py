"""Stance-aware graph neural network for misinformation propagation prediction."""

__version__ = "0.1.0"
