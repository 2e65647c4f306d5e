"""Dissipative embeddings of elementary cellular automata."""

__version__ = "0.1.0"
