"""Hyperspectral reconstruction from RGB via unobservable-feature latent diffusion."""

__version__ = "0.1.0"
