"""Streaming test-time adaptation over precomputed vision-language embeddings."""

__version__ = "0.1.0"
