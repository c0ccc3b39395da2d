"""Operator-valued factorizations of Cayley tables and their group structure."""

__version__ = "0.1.0"
