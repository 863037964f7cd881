"""Disguised-face identification from detected facial keypoints."""

__version__ = "0.1.0"
