"""Anchor-bottleneck attention matcher for sparse keypoint correspondence."""

__version__ = "0.1.0"
