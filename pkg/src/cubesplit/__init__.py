"""Cube-split Grassmannian constellations for non-coherent SIMO links."""

from .constellation import CubeSplit, conjectured_mindist, mindist_cs_t1
from .grassmann import GrassmannPoint, chordal_distance, distance_spectrum, min_distance

__all__ = [
    "CubeSplit",
    "GrassmannPoint",
    "chordal_distance",
    "conjectured_mindist",
    "distance_spectrum",
    "min_distance",
    "mindist_cs_t1",
]

__version__ = "0.1.0"
