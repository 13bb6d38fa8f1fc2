"""Offline RL with advantage-weighted behavior-model priors."""

__version__ = "0.1.0"
