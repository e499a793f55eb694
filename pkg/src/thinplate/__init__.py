"""Numerical experiments for thin elastic plates in the linear-plate scaling regime."""

__version__ = "0.1.0"
