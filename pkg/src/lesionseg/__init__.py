"""Volumetric lesion segmentation toolkit.

A self-contained 3D residual U-Net stack: NIfTI I/O, a small reverse-mode
autodiff core, two-stage (zoom-in then zoom-out) patch training, snapshot
ensembling, and a surface/overlap metric suite with bootstrap confidence
intervals.
"""

__version__ = "0.1.0"

from .backend import BACKEND

__all__ = ["BACKEND", "__version__"]
