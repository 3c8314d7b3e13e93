"""Seeded simulator for BB84, Kak's three-stage protocol, their attacks, and
KDC-authenticated three-stage key exchange."""

__version__ = "0.1.0"
