"""Gated single-photon avalanche detector simulation toolkit."""

from .main import cli

__version__ = "1.0.0"
