"""Hyperbolic anomaly detection and localization engine."""

__version__ = "0.1.0"
