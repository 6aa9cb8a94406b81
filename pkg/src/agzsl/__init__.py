"""Attribute-guided dense attention with adversarial feature generation for GZSL."""

__version__ = "0.1.0"
