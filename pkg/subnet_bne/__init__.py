"""Approximate Bayesian Nash equilibria of two-subnetwork zero-sum games with continuous types."""

__version__ = "0.1.0"
