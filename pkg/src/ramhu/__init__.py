"""RAMHU mutual authentication: PHOTON-256 signatures, static ECIES, three-party protocols."""

__version__ = "0.1.0"
