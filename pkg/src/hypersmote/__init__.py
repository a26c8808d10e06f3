"""Hypergraph oversampling for imbalanced node classification."""

__version__ = "0.1.0"
