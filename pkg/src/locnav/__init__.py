"""Localizability-aware crowd navigation laboratory."""

__version__ = "0.1.0"
