"""Desk-scale laboratory for communication-efficient distributed SGD."""

__version__ = "0.1.0"
