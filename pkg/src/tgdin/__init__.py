"""Latent traffic-demand inference through a differentiable queueing layer."""

__version__ = "0.1.0"
