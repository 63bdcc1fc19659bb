"""Reset-heterogeneity wage dynamics: sufficient statistics and sequence-space solvers."""

__version__ = "0.1.0"
