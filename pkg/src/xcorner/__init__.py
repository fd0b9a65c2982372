"""Desk-scale X-corner detection lab: FCN detector, refiners, board recovery."""

__version__ = "0.1.0"
