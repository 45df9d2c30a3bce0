"""
brwcap
Capacity of the range of branching random walks: forests, lattice walks,
Green's functions and scaling-exponent experiments.
"""

__version__ = "0.1.0"
