"""Collaborative-importance feature selection for cold-start recommenders."""

__version__ = "0.1.0"
