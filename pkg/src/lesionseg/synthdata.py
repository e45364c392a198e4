"""Seedable brain-like synthetic volumes with known lesion ground truth.

Image = smooth tissue ellipsoid over a dark background, plus hypointense
lesion blobs (deformed ellipsoids), plus Gaussian noise. Everything is a
pure function of (config, scan index); regenerating produces identical
bytes. Lesions always lie fully inside the tissue ellipsoid, and each
voxelized lesion volume is calibrated into the configured mm^3 range.
"""

import csv
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import nifti
from .exceptions import LesionDoesNotFitError
from .volume import Mask, Volume

_DEFORM_MARGIN = 1.25  # radial deformation never exceeds this factor


@dataclass
class SynthConfig:
    extents: tuple = (48, 48, 48)
    spacing: tuple = (1.0, 1.0, 1.0)
    n_lesions: tuple = (1, 3)                    # inclusive count range
    lesion_volume_mm3: tuple = (10.0, 2.8e5)     # clipped to what fits
    background_mean: float = 0.05
    tissue_mean: float = 1.0
    tissue_std: float = 0.08                     # low-frequency intensity ripple
    lesion_offset: float = -0.5                  # hypointense on T1-like contrast
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.extents = tuple(int(e) for e in self.extents)
        self.spacing = tuple(float(s) for s in self.spacing)
        lo, hi = self.lesion_volume_mm3
        if not 0 < lo <= hi:
            raise ValueError(f"bad lesion volume range {self.lesion_volume_mm3}")
        if self.n_lesions[0] < 0 or self.n_lesions[0] > self.n_lesions[1]:
            raise ValueError(f"bad lesion count range {self.n_lesions}")


def _grids_mm(cfg):
    axes = [(np.arange(n) + 0.5) * s for n, s in zip(cfg.extents, cfg.spacing)]
    return np.meshgrid(*axes, indexing="ij")


def _tissue_geometry(cfg):
    size_mm = np.array(cfg.extents) * np.array(cfg.spacing)
    center = size_mm / 2.0
    semi = 0.42 * size_mm
    return center, semi


def _voxelize_lesion(grids, center, radii, deform):
    amp, freq, phase = deform
    ux = (grids[0] - center[0]) / radii[0]
    uy = (grids[1] - center[1]) / radii[1]
    uz = (grids[2] - center[2]) / radii[2]
    r = np.sqrt(ux * ux + uy * uy + uz * uz)
    ripple = (np.sin(freq[0] * ux + phase[0])
              * np.sin(freq[1] * uy + phase[1])
              * np.sin(freq[2] * uz + phase[2]))
    return r <= 1.0 + amp * ripple


def generate_scan(cfg, index):
    """One (image, mask) pair, deterministic in (cfg.seed, index)."""
    rng = np.random.default_rng([cfg.seed, int(index)])
    grids = _grids_mm(cfg)
    center, semi = _tissue_geometry(cfg)
    voxvol = float(np.prod(cfg.spacing))

    tissue = (((grids[0] - center[0]) / semi[0]) ** 2
              + ((grids[1] - center[1]) / semi[1]) ** 2
              + ((grids[2] - center[2]) / semi[2]) ** 2) <= 1.0

    freq = rng.uniform(1.0, 3.0, size=3)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    size_mm = np.array(cfg.extents) * np.array(cfg.spacing)
    ripple = np.sin(2 * np.pi * freq[0] * grids[0] / size_mm[0] + phase[0]) \
        * np.sin(2 * np.pi * freq[1] * grids[1] / size_mm[1] + phase[1]) \
        * np.sin(2 * np.pi * freq[2] * grids[2] / size_mm[2] + phase[2])
    image = np.where(tissue, cfg.tissue_mean + cfg.tissue_std * ripple, cfg.background_mean)

    lo, hi = cfg.lesion_volume_mm3
    fit_cap = 0.7 * (4.0 / 3.0) * np.pi * np.prod(0.45 * semi)
    hi_eff = min(hi, fit_cap)
    if lo > hi_eff:
        raise LesionDoesNotFitError(
            f"minimum lesion volume {lo} mm^3 cannot fit inside extents {cfg.extents}")

    mask = np.zeros(cfg.extents, dtype=bool)
    n = int(rng.integers(cfg.n_lesions[0], cfg.n_lesions[1] + 1))
    for _ in range(n):
        blob = _place_lesion(rng, grids, center, semi, lo, hi_eff, voxvol)
        mask |= blob
    image = image + cfg.lesion_offset * mask

    image = image + rng.normal(0.0, cfg.noise_std, size=cfg.extents)
    return (Volume(image.astype(np.float32), cfg.spacing),
            Mask(mask.astype(np.uint8), cfg.spacing))


def _place_lesion(rng, grids, center, semi, lo, hi, voxvol):
    for _ in range(40):
        target = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        aniso = rng.uniform(0.75, 1.35, size=3)
        aniso /= np.cbrt(np.prod(aniso))
        r0 = (3.0 * target / (4.0 * np.pi)) ** (1.0 / 3.0)
        radii = np.minimum(r0 * aniso, 0.45 * semi)

        c = None
        for _ in range(60):
            cand = center + rng.uniform(-1.0, 1.0, size=3) * semi
            u = (cand - center) / semi
            reach = np.max(_DEFORM_MARGIN * radii / semi)
            if np.sqrt(np.sum(u * u)) + reach <= 1.0:
                c = cand
                break
        if c is None:
            continue

        amp = float(rng.uniform(0.05, 0.2))
        freq = rng.uniform(2.0, 4.0, size=3)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        deform = (amp, freq, phase)

        blob = _voxelize_lesion(grids, c, radii, deform)
        # calibrate the voxelized volume into [lo, hi]
        for _ in range(8):
            measured = blob.sum() * voxvol
            if lo <= measured <= hi:
                return blob
            if measured == 0:
                radii = radii * 1.5
            else:
                radii = radii * (target / measured) ** (1.0 / 3.0)
            if np.any(radii > 0.45 * semi * 1.05):
                break
            blob = _voxelize_lesion(grids, c, radii, deform)
        measured = blob.sum() * voxvol
        if lo <= measured <= hi:
            return blob
    raise LesionDoesNotFitError(
        f"could not place a lesion with volume in [{lo}, {hi}] mm^3")


def generate_dataset(cfg, n_train, n_dev, n_test, out_dir):
    """Write scan/mask NIfTI pairs plus a manifest CSV with the three splits."""
    from .trainer import Manifest, ManifestRecord

    total_voxels = (n_train + n_dev + n_test) * int(np.prod(cfg.extents))
    if total_voxels > 2e8:
        warnings.warn(f"generating {total_voxels:.2e} voxels; this will be slow",
                      stacklevel=2)

    os.makedirs(out_dir, exist_ok=True)
    records = []
    index = 0
    for split, count in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        for _ in range(count):
            sid = f"s{index:04d}"
            vol, mask = generate_scan(cfg, index)
            image_path = os.path.join(out_dir, f"{sid}_scan.nii.gz")
            mask_path = os.path.join(out_dir, f"{sid}_mask.nii.gz")
            nifti.write_volume(vol, image_path, datatype=16)
            nifti.write_mask(mask, mask_path)
            records.append(ManifestRecord(sid, image_path, mask_path, split))
            index += 1
    manifest = Manifest(records)
    manifest.save(os.path.join(out_dir, "manifest.csv"))
    return manifest
