"""Numerical laboratory for the reduced U(2)-invariant Ricci flow on the
complex line bundles over the two-sphere."""

__version__ = "0.1.0"
