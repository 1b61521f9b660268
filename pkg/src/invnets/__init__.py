"""Invariant targets, one-hidden-layer networks, Gaussian BNN updates and array signal baselines."""

__version__ = "0.1.0"
