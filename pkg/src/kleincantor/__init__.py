"""Transient limit sets of normal subgroups of Schottky groups.

Modules
-------
hypgeo
    Poincaré-ball geometry: isometries, geodesics, shadows, triangles.
kleinian
    Schottky groups, reduced words, orbit enumeration, Poincaré series
    and critical-exponent estimates.
renorm
    Recurrent and transient renormalisation of geodesic trees.
cantor
    The alternating Cantor-set construction and its checks.
cli
    Command-line pipelines.
"""

__version__ = "0.1.0"

from . import cantor, hypgeo, kleinian, renorm  # noqa: E402

__all__ = ["hypgeo", "kleinian", "renorm", "cantor", "__version__"]
