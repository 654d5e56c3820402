"""Reliability, latency and anomaly analysis for BLE-mesh / power-line hybrid networks."""

__version__ = "0.1.0"
