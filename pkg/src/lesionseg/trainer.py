"""Two-stage zoom-in&out training over a dataset manifest.

One epoch draws one random patch per training scan (patch sampling is the
augmentation), grouped into small batches. Stage two (zoom-out) finetunes
stage one's parameters on larger patches and captures parameter snapshots
at its configured epochs. Everything is deterministic in (seed, manifest,
configs): per-epoch RNG streams are derived as (seed, stage ordinal, epoch).
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import nifti
from .autodiff import Tape, Tensor, backward, sigmoid
from .exceptions import (
    EmptyDevSplitError,
    EmptyTrainSplitError,
    NonFiniteLossError,
    StageOrderViolationError,
)
from .loss import LossConfig, combined_loss
from .metrics import dsc
from .optim import SgdrSchedule, adam_step, capture_snapshot, init_adam, lr_at
from .resunet import ArchConfig, preset
from .volume import SamplerConfig, binarize, normalize_zscore, sample_subvolume

# published labels for the three model variants this pipeline produces
SYSTEM_LABELS = {"final": "3D-ResU-Net",
                 "prefinetune": "3D-ResU-Net-F",
                 "ensemble": "3D-ResU-Net-E"}

MANIFEST_HEADER = ["subject_id", "image_path", "mask_path", "split"]
SPLITS = ("train", "dev", "test")


@dataclass
class ManifestRecord:
    subject_id: str
    image_path: str
    mask_path: str
    split: str


class Manifest:
    def __init__(self, records):
        self.records = list(records)
        ids = [r.subject_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate subject_ids in manifest")
        for r in self.records:
            if r.split not in SPLITS:
                raise ValueError(f"{r.subject_id}: unknown split {r.split!r}")

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def __len__(self):
        return len(self.records)

    @classmethod
    def load(cls, path, check_paths=True):
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if header != MANIFEST_HEADER:
                raise ValueError(f"manifest header {header} != {MANIFEST_HEADER}")
            records = [ManifestRecord(*row) for row in reader if row]
        if check_paths:
            for r in records:
                for p in (r.image_path, r.mask_path):
                    if not os.path.exists(p):
                        raise FileNotFoundError(f"{r.subject_id}: missing {p}")
        return cls(records)

    def save(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(MANIFEST_HEADER)
            for r in self.records:
                writer.writerow([r.subject_id, r.image_path, r.mask_path, r.split])


@dataclass
class StageConfig:
    name: str                      # "zoom_in" or "zoom_out"
    patch_extents: tuple
    epochs: int
    eta_max: float
    batch_size: int = 2
    eta_min: float = 0.0
    t0: int = 0                    # 0 means one cycle spanning all epochs
    t_mult: int = 1
    snapshot_epochs: tuple = ()
    lesion_centered_fraction: float = 0.5

    def __post_init__(self):
        self.patch_extents = tuple(int(e) for e in self.patch_extents)
        self.snapshot_epochs = tuple(sorted(int(e) for e in self.snapshot_epochs))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @property
    def schedule(self):
        t0 = self.t0 if self.t0 >= 1 else self.epochs
        return SgdrSchedule(eta_max=self.eta_max, eta_min=self.eta_min,
                            t0=t0, t_mult=self.t_mult)


@dataclass
class TrainConfig:
    arch: ArchConfig
    stages: list                   # [zoom_in, zoom_out]
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 1
    normalize: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_crop: tuple = None        # None = whole scan
    eval_every: int = 10
    threshold: float = 0.5

    @classmethod
    def from_dict(cls, d):
        arch_d = dict(d["arch"])
        arch = preset(arch_d["preset"]) if "preset" in arch_d else ArchConfig(**arch_d)
        stages = []
        for name in ("zoom_in", "zoom_out"):
            s = dict(d["stages"][name])
            s["patch_extents"] = tuple(s.pop("patch"))
            stages.append(StageConfig(name=name, **s))
        loss_cfg = LossConfig(**d.get("loss", {}))
        adam = d.get("adam", {})
        ev = d.get("eval", {})
        crop = ev.get("crop")
        return cls(arch=arch, stages=stages, loss=loss_cfg,
                   seed=int(d.get("seed", 1)),
                   normalize=bool(d.get("normalize", True)),
                   adam_beta1=adam.get("beta1", 0.9),
                   adam_beta2=adam.get("beta2", 0.999),
                   adam_eps=adam.get("eps", 1e-8),
                   eval_crop=None if crop is None else tuple(crop),
                   eval_every=int(ev.get("every_k_epochs", 10)),
                   threshold=float(ev.get("threshold", 0.5)))

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class TrainingOutput:
    arch: ArchConfig
    final_state: dict
    prefinetune_state: dict
    snapshots: list
    histories: dict                # stage name -> history list
    best_dev: dict                 # {"epoch", "dev_dsc", "state"} or None


class _ScanCache:
    """Lazy in-memory cache of normalized scans and their masks."""

    def __init__(self, normalize=True):
        self.normalize = normalize
        self._cache = {}

    def get(self, record):
        if record.subject_id not in self._cache:
            vol = nifti.read_volume(record.image_path)
            if self.normalize:
                vol = normalize_zscore(vol)
            mask = nifti.read_mask(record.mask_path)
            self._cache[record.subject_id] = (vol, mask)
        return self._cache[record.subject_id]


def _mean_loss_finite(value, epoch, history):
    if not np.isfinite(value):
        history.append({"epoch": epoch, "event": "non_finite_loss", "loss": float(value)})
        raise NonFiniteLossError(f"loss became non-finite at epoch {epoch}")


def train_stage(model, manifest, stage, loss_cfg, seed, *, stage_ordinal=0,
                normalize=True, adam_kwargs=None, eval_crop=None, eval_every=0,
                threshold=0.5, cache=None, log=None):
    """Run one stage; returns (snapshots, history, best_dev)."""
    train_records = manifest.split("train")
    if not train_records:
        raise EmptyTrainSplitError("manifest has no train records")
    cache = cache or _ScanCache(normalize=normalize)
    params = model.parameters()
    state = init_adam(params, lr=stage.eta_max, **(adam_kwargs or {}))
    schedule = stage.schedule
    sampler = SamplerConfig(patch_extents=stage.patch_extents,
                            lesion_centered_fraction=stage.lesion_centered_fraction)

    snapshots = []
    history = []
    best_dev = None
    for epoch in range(1, stage.epochs + 1):
        lr = lr_at(schedule, epoch - 1)
        state.lr = lr
        rng = np.random.default_rng([seed, stage_ordinal, epoch])
        order = rng.permutation(len(train_records))
        patches = []
        for i in order:
            vol, mask = cache.get(train_records[i])
            patches.append(sample_subvolume(vol, mask, sampler, rng))

        losses = []
        for start in range(0, len(patches), stage.batch_size):
            chunk = patches[start:start + stage.batch_size]
            x = np.stack([p[0].data for p in chunk])[:, None].astype(np.float32)
            t = np.stack([p[1].data for p in chunk])[:, None].astype(np.float32)
            model.zero_grads()
            with Tape() as tape:
                logits = model.forward(Tensor(x))
                prob = sigmoid(logits)
                loss = combined_loss(prob, t, loss_cfg)
            value = float(loss.data)
            _mean_loss_finite(value, epoch, history)
            backward(tape, loss)
            adam_step(params, state)
            losses.append(value)

        entry = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses))}
        if eval_every and epoch % eval_every == 0:
            dev = evaluate_dev(model, manifest, crop_extents=eval_crop,
                               threshold=threshold, normalize=normalize, cache=cache)
            entry["dev_dsc"] = dev
            if best_dev is None or dev > best_dev["dev_dsc"]:
                best_dev = {"epoch": epoch, "dev_dsc": dev, "state": model.state_dict()}
        history.append(entry)
        if log:
            log(stage.name, entry)

        snap = capture_snapshot(model, epoch, stage.snapshot_epochs)
        if snap is not None:
            snapshots.append(snap)

    return snapshots, history, best_dev


def evaluate_dev(model, manifest, *, crop_extents=None, threshold=0.5,
                 normalize=True, cache=None):
    """Mean DSC of center-crop predictions over the dev split."""
    from .inference import predict_volume

    dev_records = manifest.split("dev")
    if not dev_records:
        raise EmptyDevSplitError("manifest has no dev records")
    cache = cache or _ScanCache(normalize=normalize)
    scores = []
    for r in dev_records:
        vol, mask = cache.get(r)
        crop = crop_extents or vol.extents
        prob = predict_volume(model, vol, crop, normalize=False)
        scores.append(dsc(binarize(prob, threshold), mask))
    return float(np.mean(scores))


def run_zoom_in_out(model, manifest, stages, loss_cfg, seed, *, normalize=True,
                    adam_kwargs=None, eval_crop=None, eval_every=0,
                    threshold=0.5, log=None):
    """Both stages in order; stage two finetunes stage one's parameters.

    Output bundles the final model ("3D-ResU-Net"), the pre-finetune model
    ("3D-ResU-Net-F"), and the zoom-out snapshots ("3D-ResU-Net-E").
    """
    if len(stages) != 2 or stages[0].name != "zoom_in" or stages[1].name != "zoom_out":
        raise StageOrderViolationError("stages must be [zoom_in, zoom_out]")
    for a in range(3):
        if stages[1].patch_extents[a] < stages[0].patch_extents[a]:
            raise StageOrderViolationError(
                f"zoom_out patch {stages[1].patch_extents} smaller than "
                f"zoom_in patch {stages[0].patch_extents}")

    cache = _ScanCache(normalize=normalize)
    common = dict(normalize=normalize, adam_kwargs=adam_kwargs, eval_crop=eval_crop,
                  eval_every=eval_every, threshold=threshold, cache=cache, log=log)
    _, hist_in, _ = train_stage(model, manifest, stages[0], loss_cfg, seed,
                                stage_ordinal=0, **common)
    prefinetune_state = model.state_dict()
    snapshots, hist_out, best_dev = train_stage(model, manifest, stages[1], loss_cfg,
                                                seed, stage_ordinal=1, **common)
    return TrainingOutput(arch=model.cfg,
                          final_state=model.state_dict(),
                          prefinetune_state=prefinetune_state,
                          snapshots=snapshots,
                          histories={"zoom_in": hist_in, "zoom_out": hist_out},
                          best_dev=best_dev)
