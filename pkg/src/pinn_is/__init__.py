"""Physics-informed network training with uniform and importance sampling."""

__version__ = "0.1.0"
