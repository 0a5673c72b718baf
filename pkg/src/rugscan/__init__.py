"""Bytecode-level detection of token backdoors (hidden mint, sell limits, token leaks)."""

__version__ = "0.1.0"
