"""Dual-illumination (low-light and backlit) image enhancement with a Retinex
formulation, an S-curve mixture-of-experts illumination estimator and a
cross-attention / state-space damage restorer."""

__version__ = "0.1.0"
