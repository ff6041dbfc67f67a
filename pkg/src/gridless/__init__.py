"""Off-grid emergency mesh communication toolkit.

Calibrated LoRa mesh simulation, PKI-backed signed messaging, transport
fallback, and range-test analysis.
"""

__version__ = "0.1.0"
