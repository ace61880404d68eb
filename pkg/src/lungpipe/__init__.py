"""Lung cancer classification pipeline: detection, malignancy CNNs, integration."""

__version__ = "0.1.0"
