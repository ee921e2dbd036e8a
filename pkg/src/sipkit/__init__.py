"""Sensitivity index probabilities (SIPs) for unobserved confounding in propensity scores."""

__version__ = "0.1.0"
