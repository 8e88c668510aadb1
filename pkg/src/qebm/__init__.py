"""Energy-based models of quantum states learned from POVM measurement records
with Interaction Screening."""

__version__ = "0.1.0"
