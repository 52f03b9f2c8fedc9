"""Sharded hashgraph consensus simulator and protocol library."""

__version__ = "0.1.0"
