"""Multiscale geometry of discrete measures: beta numbers, densities, Riesz transforms."""
__version__ = "0.1.0"
