"""Continuation and bifurcation toolkit for the delay-coupled HKB pair."""

from .model import ModelParams, SubspaceMode, state

__version__ = "0.1.0"

__all__ = ["ModelParams", "SubspaceMode", "state", "__version__"]
