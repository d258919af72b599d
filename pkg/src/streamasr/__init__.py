"""Desk-scale end-to-end speech recognition laboratory (RNN-T, RNN-AED, Transformer-AED)."""

__version__ = "0.1.0"
