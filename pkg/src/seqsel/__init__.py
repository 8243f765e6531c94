"""Attention-based sequence-to-sequence sound event localization."""

__version__ = "0.1.0"
