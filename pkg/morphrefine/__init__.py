"""Refinement of coarse semantic labels with morphological seeds and a seeded random walker."""

__version__ = "0.1.0"
