"""Whole-scan prediction: center-crop, forward, sigmoid, zero-pad back.

Every voxel outside the crop window is classified negative (probability
exactly 0). Snapshot ensembling averages per-snapshot probabilities by
default; a logit-mean variant exists for ablation.
"""

import numpy as np

from .autodiff import Tensor, sigmoid
from .exceptions import ArchMismatchError
from .volume import Volume, center_crop, normalize_zscore, pad_to_full


def _forward_cropped(model, scan, crop_extents, normalize):
    v = normalize_zscore(scan) if normalize else scan
    cropped, window = center_crop(v, crop_extents)
    x = Tensor(cropped.data[None, None].astype(np.float32))
    logits = model.forward(x)
    return logits.data[0, 0], window


def predict_volume(model, scan, crop_extents=None, *, normalize=True):
    """Probability volume with the scan's extents; zeros outside the window."""
    crop_extents = tuple(crop_extents) if crop_extents else tuple(scan.extents)
    logits, window = _forward_cropped(model, scan, crop_extents, normalize)
    prob = sigmoid(Tensor(logits)).data.astype(np.float32)
    return pad_to_full(Volume(prob, scan.spacing), window, scan.extents)


def ensemble_predict(model, snapshots, scan, crop_extents=None, *,
                     normalize=True, average="prob"):
    """Mean prediction over parameter snapshots (probability or logit mean)."""
    if not snapshots:
        raise ArchMismatchError("need at least one snapshot")
    if average not in ("prob", "logit"):
        raise ValueError(f"average must be 'prob' or 'logit', got {average!r}")
    crop_extents = tuple(crop_extents) if crop_extents else tuple(scan.extents)

    saved = model.state_dict()
    try:
        acc = None
        window = None
        for snap in snapshots:
            model.load_state_dict(snap.parameters)
            logits, window = _forward_cropped(model, scan, crop_extents, normalize)
            term = logits if average == "logit" else sigmoid(Tensor(logits)).data
            acc = term.astype(np.float64) if acc is None else acc + term
        acc /= len(snapshots)
        if average == "logit":
            acc = sigmoid(Tensor(acc)).data
    finally:
        model.load_state_dict(saved)
    return pad_to_full(Volume(acc.astype(np.float32), scan.spacing),
                       window, scan.extents)
