"""Volumes, masks, and the geometric operations on them.

A Volume is a 3D scalar grid with per-axis physical spacing in mm, axis
order (x, y, z) with x fastest on disk. A Mask is the binary counterpart
carrying reference tracings or thresholded predictions.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    CropTooLargeError,
    ExtentMismatchError,
    PatchTooLargeError,
    WindowMismatchError,
)


@dataclass
class Volume:
    data: np.ndarray                       # (nx, ny, nz)
    spacing: tuple = (1.0, 1.0, 1.0)       # mm per voxel

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ExtentMismatchError(f"volume data must be 3D, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ExtentMismatchError(f"spacing must be 3 positive reals, got {self.spacing}")

    @property
    def extents(self):
        return self.data.shape

    @property
    def voxel_volume_mm3(self):
        sx, sy, sz = self.spacing
        return sx * sy * sz


@dataclass
class Mask:
    data: np.ndarray                       # (nx, ny, nz), values 0/1
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ExtentMismatchError(f"mask data must be 3D, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ExtentMismatchError("mask voxels must be exactly 0 or 1")
        self.data = arr.astype(np.uint8, copy=False)
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def extents(self):
        return self.data.shape

    @property
    def lesion_voxels(self):
        return int(self.data.sum())

    @property
    def lesion_volume_mm3(self):
        sx, sy, sz = self.spacing
        return self.lesion_voxels * sx * sy * sz


@dataclass
class CropWindow:
    offset: tuple     # (ox, oy, oz) voxels
    extents: tuple    # (cx, cy, cz) voxels


@dataclass
class SamplerConfig:
    patch_extents: tuple
    seed: int = 0
    lesion_centered_fraction: float = 0.5


def center_crop(v, extents):
    """Crop the centered window of the given extents; offsets floor on odd remainders."""
    extents = tuple(int(e) for e in extents)
    for a in range(3):
        if extents[a] > v.extents[a] or extents[a] < 1:
            raise CropTooLargeError(f"crop {extents} does not fit in {v.extents}")
    offset = tuple((v.extents[a] - extents[a]) // 2 for a in range(3))
    ox, oy, oz = offset
    cx, cy, cz = extents
    out = v.data[ox:ox + cx, oy:oy + cy, oz:oz + cz].copy()
    cls = type(v)
    return cls(out, v.spacing), CropWindow(offset, extents)


def pad_to_full(prob, window, full_extents):
    """Embed a cropped volume back at its window; everything outside is exactly 0."""
    full_extents = tuple(int(e) for e in full_extents)
    if tuple(prob.extents) != tuple(window.extents):
        raise WindowMismatchError(f"volume extents {prob.extents} != window extents {window.extents}")
    for a in range(3):
        if window.offset[a] < 0 or window.offset[a] + window.extents[a] > full_extents[a]:
            raise WindowMismatchError(f"window {window} does not fit in {full_extents}")
    out = np.zeros(full_extents, dtype=prob.data.dtype)
    ox, oy, oz = window.offset
    cx, cy, cz = window.extents
    out[ox:ox + cx, oy:oy + cy, oz:oz + cz] = prob.data
    return type(prob)(out, prob.spacing)


def sample_subvolume(v, m, cfg, rng):
    """Draw one training patch (image + mask) with an optional lesion-containing bias.

    With probability cfg.lesion_centered_fraction (and a non-empty mask) the
    window is constrained to contain at least one lesion voxel; otherwise the
    corner is uniform over all valid positions. Identical rng state gives an
    identical window.
    """
    if tuple(v.extents) != tuple(m.extents):
        raise ExtentMismatchError(f"image extents {v.extents} != mask extents {m.extents}")
    p = tuple(int(e) for e in cfg.patch_extents)
    for a in range(3):
        if p[a] > v.extents[a]:
            raise PatchTooLargeError(f"patch {p} does not fit in {v.extents}")

    max_corner = tuple(v.extents[a] - p[a] for a in range(3))
    lesion_biased = rng.random() < cfg.lesion_centered_fraction
    if lesion_biased and m.lesion_voxels > 0:
        coords = np.argwhere(m.data > 0)
        vox = coords[rng.integers(0, len(coords))]
        corner = []
        for a in range(3):
            lo = max(0, int(vox[a]) - (p[a] - 1))
            hi = min(max_corner[a], int(vox[a]))
            corner.append(int(rng.integers(lo, hi + 1)))
    else:
        corner = [int(rng.integers(0, max_corner[a] + 1)) for a in range(3)]

    ox, oy, oz = corner
    img = Volume(v.data[ox:ox + p[0], oy:oy + p[1], oz:oz + p[2]].copy(), v.spacing)
    msk = Mask(m.data[ox:ox + p[0], oy:oy + p[1], oz:oz + p[2]].copy(), m.spacing)
    return img, msk


def normalize_zscore(v):
    """Per-volume z-score; a constant volume maps to all zeros."""
    data = v.data.astype(np.float64)
    mean = data.mean()
    std = data.std()
    if std == 0.0:
        out = np.zeros_like(data)
    else:
        out = (data - mean) / std
    return Volume(out.astype(np.float32), v.spacing)


def binarize(prob, threshold=0.5):
    """Threshold probabilities into a mask; the boundary is inclusive (>=)."""
    return Mask((prob.data >= threshold).astype(np.uint8), prob.spacing)
