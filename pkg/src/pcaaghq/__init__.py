"""Nested adaptive Gauss-Hermite quadrature with PCA grid truncation for latent Gaussian models."""

__version__ = "0.1.0"
