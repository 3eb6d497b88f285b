"""Lightweight Schnorr-style signatures with commitment servers (LRSHA and FLRSHA)."""

__version__ = "0.1.0"
