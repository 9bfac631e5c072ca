"""Hajlasz-Sobolev decompositions and elliptic measure experiments on rough planar domains."""

__version__ = "0.1.0"
