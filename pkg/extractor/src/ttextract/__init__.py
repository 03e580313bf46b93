"""Offline extraction of vision-language embeddings into the feature-file
formats the streaming engine consumes."""

__version__ = "0.1.0"
