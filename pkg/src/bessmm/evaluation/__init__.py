"""Forecast-quality and decision-value metrics, the tau-sufficiency scan, the
layer attribution harness and robustness splits."""
