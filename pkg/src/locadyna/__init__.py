"""Local-change adaptation benchmark for deep Dyna-Q agents with partial models."""

__version__ = "0.1.0"
