"""Multi-market battery storage trading: dispatch, allocation and forecast-value evaluation."""

__version__ = "0.1.0"
