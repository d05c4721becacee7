"""Structured feature learning for pose estimation on synthetic stick figures."""

__version__ = "0.1.0"
