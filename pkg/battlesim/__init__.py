"""Simulator for permissionless dispute tournaments over pre-signed transaction DAGs."""

__version__ = "0.1.0"
