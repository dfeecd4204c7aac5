"""Checkpoint merging, rank-1 subspace analysis and Extra-Merge extrapolation."""

from ._xmerge import *  # noqa: F401,F403
from ._xmerge import DataError, NumericalError, UsageError, XmergeError

__version__ = "0.1.0"
__all__ = [name for name in dir() if not name.startswith("_")]
