"""Fault criticality analysis, split ATPG, and faulty PE-array simulation
for MAC-based AI accelerators."""

__version__ = "0.1.0"
