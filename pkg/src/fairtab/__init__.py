"""Fair tabular data synthesis with a two-phase WGAN-GP."""

__version__ = "0.1.0"
