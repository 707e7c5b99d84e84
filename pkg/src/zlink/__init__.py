"""Linkability analysis for Sprout-era shielded transactions."""

__version__ = "0.1.0"
