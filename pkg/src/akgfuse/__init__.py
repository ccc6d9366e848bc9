"""Situated perceptual knowledge graphs fused with vision embeddings for
abstract-concept image classification."""

__version__ = "0.1.0"
