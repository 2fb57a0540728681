"""Weave graph convolutions for small-molecule property prediction."""

__version__ = "0.1.0"
