"""Backward stochastic differential equations with Stieltjes clocks on finite spaces."""

__version__ = "0.1.0"
