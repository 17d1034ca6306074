"""Latent-query abstractive summarization at desk scale."""
__version__ = "0.1.0"
