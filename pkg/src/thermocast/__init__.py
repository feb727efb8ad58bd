"""Global encoder-decoder forecasting of multi-room indoor temperatures."""

__version__ = "0.1.0"
