"""Arbitrary-size, task-aware point-cloud downsampling (sample-to-refine)."""

__version__ = "0.1.0"
