"""Invariant Riemannian metrics on conditional polytopes and related dynamics."""

__version__ = "0.1.0"
