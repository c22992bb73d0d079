"""Curiosity-driven saliency learning on a simulated mobile robot."""

__version__ = "0.1.0"
