"""Neighborhood label-uncertainty scoring and sample reweighting."""

__version__ = "0.1.0"
