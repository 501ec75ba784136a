"""Deterministic CPU engine for fitting 4D Gaussian-splat scenes to monocular video.

The pipeline lifts a segmented video into per-object Gaussian clouds, fits
object-centric deformation fields, and recombines objects, world warps and a
camera track into a composed dynamic scene.  Everything runs in float64 numpy
with hand-written backward passes so results are reproducible bit-for-bit
across runs and thread counts.
"""

from .camera import PinholeCamera
from .cloud import Gaussian3D, GaussianCloud, TimeIndex

__all__ = ["PinholeCamera", "Gaussian3D", "GaussianCloud", "TimeIndex"]

__version__ = "0.1.0"
