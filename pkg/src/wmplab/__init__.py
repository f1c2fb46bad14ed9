"""Lagrange finite element laboratory for discrete maximum principles,
L-infinity Ritz stability and boundary-layer error functionals on
tetrahedral meshes."""
from __future__ import annotations

__version__ = "0.1.0"
