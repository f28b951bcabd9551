"""Example-guided latent-space control for audio texture generation."""

__version__ = "0.1.0"
