"""Latent-variable sequence models: lattices, estimators, pointer mixtures and trainers."""

__version__ = "0.1.0"
