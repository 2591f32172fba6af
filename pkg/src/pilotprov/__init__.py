"""Demand-driven pilot pod provisioning with a deterministic pool simulator."""

__version__ = "0.1.0"
