"""Layered trust architecture for blockchain-based IoT: data trust, adaptive block validation and a discrete-event simulator."""

__version__ = "0.1.0"
