"""Bounds, estimators and exact oracles for the operator norm of random
matrices (a_ij X_ij) with independent symmetric entries."""
from .dist import DistSpec, TailProfile

__version__ = "0.1.0"

__all__ = ["DistSpec", "TailProfile", "__version__"]
