"""Active touch-only object recognition with Monte Carlo tree search."""

__version__ = "0.1.0"
