"""Time-aware transformer encoder and semantic-change-detection pipeline."""

__version__ = "0.1.0"
