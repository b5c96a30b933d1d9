"""Desk-scale two-stage relighting toolkit.

Diffuse inverse rendering with second-order spherical harmonics and
occlusion-aware light transport maps, a residual refinement stage for
non-diffuse reflection, and a light-conditioned deep-video-prior
stabilizer for flicker-tolerant video relighting.
"""

__version__ = "0.1.0"

from relight.errors import EmptyRegionError, FormatError

__all__ = ["EmptyRegionError", "FormatError", "__version__"]
