"""Prolog-initialized chain-of-thought question answering."""

__version__ = "0.1.0"
