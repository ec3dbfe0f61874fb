"""Multi-scale environment-aware trajectory forecasting."""
__version__ = "0.1.0"
