"""One-shot question labeling and gated convolutional answer retrieval."""

__version__ = "0.1.0"
