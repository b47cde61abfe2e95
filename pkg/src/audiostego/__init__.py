"""Residual image-in-audio steganography on short-time DCT spectrograms."""

__version__ = "0.1.0"
