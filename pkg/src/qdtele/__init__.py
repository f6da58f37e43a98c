"""Teleportation-fidelity modeling for imperfect cascaded photon-pair sources."""

__version__ = "0.1.0"
