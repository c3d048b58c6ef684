"""Perspective-distortion toolkit for human mesh recovery.

Camera algebra, a procedural articulated body, a z-buffer rasterizer for
distortion images, hybrid re-projection losses, evaluation metrics,
synthetic scene sampling and an optimization-based fitter.
"""

__version__ = "0.1.0"
