"""Curvature tensors and pseudosymmetry-type identities of coordinate metrics."""

__version__ = "0.1.0"
