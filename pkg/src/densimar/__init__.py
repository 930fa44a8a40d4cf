"""Unsupervised metal-artifact reduction by fitting a density neural field
through a polychromatic fan-beam acquisition model."""

__version__ = "0.1.0"
