"""Coordinated transmission/distribution market, IoT load attacks and breaker cascades."""

__version__ = "0.1.0"
