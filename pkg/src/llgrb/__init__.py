"""Reduced basis and sparse grid surrogates for the parametric stochastic LLG equation."""

__version__ = "0.1.0"
