"""Sparse-cue guided stereo matching with cross-based cue expansion."""

__version__ = "0.1.0"
