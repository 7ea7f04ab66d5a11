"""MU-OAMP/VAMP detection, state evolution and constrained capacity for
coded multi-user MIMO with fixed input constellations."""

__version__ = "0.1.0"
