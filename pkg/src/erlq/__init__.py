"""Entropy-regularized discounted LQ control with multiplicative noise."""

__version__ = "0.1.0"
