"""Model-based clustering with parsimonious Gaussian mixtures."""

__version__ = "0.1.0"
