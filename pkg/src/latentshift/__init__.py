"""Latent feature shifting for controlled generative-model output."""

__version__ = "0.1.0"
