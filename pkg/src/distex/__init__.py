"""Distributed exchange simulator: FIX order entry, UDP market data, robot traders."""

__version__ = "0.1.0"
