"""Numerical lab for energy transfer to high frequencies in the cubic Schrodinger
equation with a convolution potential on the 2-torus."""

__version__ = "0.1.0"
