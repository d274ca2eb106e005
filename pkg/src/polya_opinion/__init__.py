"""Interacting Polya urn model of opinion dynamics under social pressure."""

__version__ = "0.1.0"
