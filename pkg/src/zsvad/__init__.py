"""Zero-shot video anomaly detection pipeline at desk scale."""

__version__ = "0.1.0"
