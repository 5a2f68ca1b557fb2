"""Bid recommendations from Bayesian-smoothed CTR estimates."""

__version__ = "0.1.0"
