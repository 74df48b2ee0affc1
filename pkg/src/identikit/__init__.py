"""Uncertainty quantification and identifiability for compartmental epidemic models."""
__version__ = "0.1.0"
