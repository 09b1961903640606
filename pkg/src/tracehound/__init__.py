"""Hierarchical DDoS incident investigation over replayed captures."""

__version__ = "0.1.0"
