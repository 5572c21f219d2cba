"""Spin-photon cluster-state simulation for a quantum-dot trion."""

__version__ = "0.1.0"
