"""Per-scan segmentation metrics: overlap scores and surface distances.

Surfaces are voxel-center sets: a 1-voxel belongs to the surface iff one of
its 6-connected neighbors is 0 or outside the volume (the volume border
counts as outside). Distances are anisotropic Euclidean between voxel
centers, in mm. With either surface empty the distance metrics are NaN and
get excluded from aggregates with an explicit count.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .exceptions import EmptyInputError, ExtentMismatchError
from .volume import binarize

DEFAULT_THRESHOLD_GRID = np.round(np.arange(1, 100) * 0.01, 2)


@dataclass
class ScanMetrics:
    subject_id: str
    dsc: float
    mdsc: float
    mdsc_threshold: float
    hd_mm: float
    assd_mm: float
    tpr: float
    precision: float
    lesion_voxels_ref: int
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def confusion(self):
        return (self.tp, self.fp, self.fn, self.tn)

    def to_dict(self):
        def jsonable(x):
            return None if isinstance(x, float) and not np.isfinite(x) else x
        return {
            "subject_id": self.subject_id,
            "dsc": self.dsc, "mdsc": self.mdsc, "mdsc_threshold": self.mdsc_threshold,
            "hd_mm": jsonable(self.hd_mm), "assd_mm": jsonable(self.assd_mm),
            "tpr": self.tpr, "precision": jsonable(self.precision),
            "lesion_voxels_ref": self.lesion_voxels_ref,
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
        }

    @classmethod
    def from_dict(cls, d):
        def definite(x):
            return float("nan") if x is None else float(x)
        return cls(subject_id=d["subject_id"], dsc=float(d["dsc"]), mdsc=float(d["mdsc"]),
                   mdsc_threshold=float(d["mdsc_threshold"]), hd_mm=definite(d["hd_mm"]),
                   assd_mm=definite(d["assd_mm"]), tpr=float(d["tpr"]),
                   precision=definite(d["precision"]),
                   lesion_voxels_ref=int(d["lesion_voxels_ref"]),
                   tp=int(d["tp"]), fp=int(d["fp"]), fn=int(d["fn"]), tn=int(d["tn"]))


@dataclass
class SurfacePointSet:
    points: np.ndarray   # (k, 3) integer voxel coordinates
    spacing: tuple

    def __len__(self):
        return len(self.points)


def _check_geometry(pred, ref):
    if tuple(pred.extents) != tuple(ref.extents):
        raise ExtentMismatchError(f"extents {pred.extents} != {ref.extents}")
    if tuple(pred.spacing) != tuple(ref.spacing):
        raise ExtentMismatchError(f"spacing {pred.spacing} != {ref.spacing}")


def confusion_counts(pred, ref):
    _check_geometry(pred, ref)
    p = pred.data.astype(bool)
    r = ref.data.astype(bool)
    tp = int(np.count_nonzero(p & r))
    fp = int(np.count_nonzero(p & ~r))
    fn = int(np.count_nonzero(~p & r))
    tn = p.size - tp - fp - fn
    return tp, fp, fn, tn


def dsc(pred, ref):
    """2|P n R| / (|P| + |R|); both masks empty gives 1.0."""
    tp, fp, fn, _ = confusion_counts(pred, ref)
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def tpr_precision(pred, ref):
    """Voxel recall and precision; degenerate sides follow documented conventions."""
    tp, fp, fn, _ = confusion_counts(pred, ref)
    n_ref = tp + fn
    n_pred = tp + fp
    tpr = 1.0 if n_ref == 0 else tp / n_ref
    if n_pred == 0:
        precision = 1.0 if n_ref == 0 else float("nan")
    else:
        precision = tp / n_pred
    return tpr, precision


def max_dsc(prob, ref, thresholds=None):
    """Max DSC over a threshold sweep; ties resolve to the smallest threshold."""
    _check_geometry(prob, ref)
    taus = DEFAULT_THRESHOLD_GRID if thresholds is None else np.asarray(thresholds, dtype=float)
    if taus.size == 0:
        raise EmptyInputError("threshold grid is empty")
    taus = np.sort(taus)

    flat = prob.data.reshape(-1)
    on_ref = np.sort(flat[ref.data.reshape(-1) > 0])
    all_sorted = np.sort(flat)
    n_ref = on_ref.size
    # counts of values >= tau ("binarize" is inclusive at the threshold)
    tp = n_ref - np.searchsorted(on_ref, taus, side="left")
    n_pred = flat.size - np.searchsorted(all_sorted, taus, side="left")
    denom = n_pred + n_ref
    scores = np.where(denom == 0, 1.0, 2.0 * tp / np.maximum(denom, 1))
    best = int(np.argmax(scores))  # argmax takes the first (smallest tau) on ties
    return float(scores[best]), float(taus[best])


def extract_surface(m):
    """6-connected boundary voxels of a mask; the volume border is outside."""
    core = m.data.astype(bool)
    padded = np.pad(core, 1, constant_values=False)
    interior = (core
                & padded[:-2, 1:-1, 1:-1] & padded[2:, 1:-1, 1:-1]
                & padded[1:-1, :-2, 1:-1] & padded[1:-1, 2:, 1:-1]
                & padded[1:-1, 1:-1, :-2] & padded[1:-1, 1:-1, 2:])
    return SurfacePointSet(np.argwhere(core & ~interior), tuple(m.spacing))


def surface_distances(pred, ref):
    """(Hausdorff, average symmetric surface distance) in mm; NaN on empty surfaces."""
    _check_geometry(pred, ref)
    sp = extract_surface(pred)
    sr = extract_surface(ref)
    if len(sp) == 0 or len(sr) == 0:
        return float("nan"), float("nan")
    d_pr = kernels.directed_surface_distances(sp.points, sr.points, pred.spacing)
    d_rp = kernels.directed_surface_distances(sr.points, sp.points, pred.spacing)
    hd = max(float(d_pr.max()), float(d_rp.max()))
    assd = (float(d_pr.sum()) + float(d_rp.sum())) / (len(sp) + len(sr))
    return hd, assd


def micro_dsc(per_scan):
    """DSC on voxel counts pooled over all scans (global, size-weighted)."""
    if not per_scan:
        raise EmptyInputError("need at least one scan")
    tp = sum(m.tp for m in per_scan)
    fp = sum(m.fp for m in per_scan)
    fn = sum(m.fn for m in per_scan)
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def compute_scan_metrics(subject_id, prob, ref, threshold=0.5, thresholds=None):
    """All per-scan metrics for one probability volume against its reference."""
    pred = binarize(prob, threshold)
    tp, fp, fn, tn = confusion_counts(pred, ref)
    d = 1.0 if (2 * tp + fp + fn) == 0 else 2.0 * tp / (2 * tp + fp + fn)
    mdsc, mtau = max_dsc(prob, ref, thresholds)
    hd, assd = surface_distances(pred, ref)
    tpr, precision = tpr_precision(pred, ref)
    return ScanMetrics(subject_id=str(subject_id), dsc=d, mdsc=mdsc, mdsc_threshold=mtau,
                       hd_mm=hd, assd_mm=assd, tpr=tpr, precision=precision,
                       lesion_voxels_ref=tp + fn, tp=tp, fp=fp, fn=fn, tn=tn)
