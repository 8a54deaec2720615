"""Representation unlearning: forgetting through a learned map on penultimate representations"""

__version__ = "0.1.0"
