"""3D residual U-Net assembled from autodiff operators.

Residual blocks are pre-activation (gn -> relu -> conv3, twice) with an
identity skip; channel width changes live in the strided down-convs and the
post-upsample 1x1x1 convs, so every block keeps in == out channels. Decoder
blocks run at the concatenated (skip + upsampled) width. The "resunet52"
preset carries 52 learned convolutions in total, exactly 5 of them at full
resolution; the per-level table is documented in docs/arch-resunet52.md.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ArchMismatchError, InvalidConfigError


@dataclass
class ArchConfig:
    levels: int
    base_channels: int
    blocks_per_level_encoder: list
    blocks_per_level_decoder: list
    bottleneck_blocks: int
    channel_multiplier: int = 2
    gn_groups_cap: int = 8
    gn_eps: float = 1e-5
    preset_name: str = ""

    def __post_init__(self):
        if self.levels < 2:
            raise InvalidConfigError("need at least 2 resolution levels")
        n = self.levels - 1
        if len(self.blocks_per_level_encoder) != n or len(self.blocks_per_level_decoder) != n:
            raise InvalidConfigError(
                f"encoder/decoder block lists must have {n} entries (levels 0..{n - 1})")
        if self.channel_multiplier != 2:
            raise InvalidConfigError("channel multiplier is fixed at 2")
        for w in self.widths() + [2 * w for w in self.widths()]:
            if w % self.gn_groups(w) != 0:
                raise InvalidConfigError(f"width {w} not divisible by its group count")

    def widths(self):
        return [self.base_channels * self.channel_multiplier ** l for l in range(self.levels)]

    def gn_groups(self, channels):
        return min(self.gn_groups_cap, channels)

    @property
    def divisor(self):
        """Spatial extents must be processable at the coarsest level."""
        return 2 ** (self.levels - 1)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


PRESETS = {
    "resunet52": dict(levels=5, base_channels=16,
                      blocks_per_level_encoder=[1, 3, 3, 3],
                      blocks_per_level_decoder=[0, 3, 3, 3],
                      bottleneck_blocks=2),
    "tiny": dict(levels=2, base_channels=8,
                 blocks_per_level_encoder=[1],
                 blocks_per_level_decoder=[0],
                 bottleneck_blocks=1),
}


def preset(name):
    if name not in PRESETS:
        raise InvalidConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return ArchConfig(preset_name=name, **PRESETS[name])


class _Conv:
    def __init__(self, model, name, cin, cout, k, stride, pad, level):
        std = math.sqrt(2.0 / (cin * k ** 3))
        w = model._rng.standard_normal((cout, cin, k, k, k)) * std
        self.w = model._register(f"{name}.w", w)
        self.b = model._register(f"{name}.b", np.zeros(cout))
        self.stride, self.pad = stride, pad
        model._convs.append((name, level))

    def __call__(self, t):
        return ad.conv3d(t, self.w, self.b, stride=self.stride, pad=self.pad)


class _GroupNorm:
    def __init__(self, model, name, channels):
        self.gamma = model._register(f"{name}.gamma", np.ones(channels))
        self.beta = model._register(f"{name}.beta", np.zeros(channels))
        self.groups = model.cfg.gn_groups(channels)
        self.eps = model.cfg.gn_eps

    def __call__(self, t):
        return ad.group_norm(t, self.groups, self.gamma, self.beta, eps=self.eps)


class _ResBlock:
    """Pre-activation residual block, in == out channels, extents preserved."""

    def __init__(self, model, name, channels, level):
        self.gn1 = _GroupNorm(model, f"{name}.gn1", channels)
        self.conv1 = _Conv(model, f"{name}.conv1", channels, channels, 3, 1, 1, level)
        self.gn2 = _GroupNorm(model, f"{name}.gn2", channels)
        self.conv2 = _Conv(model, f"{name}.conv2", channels, channels, 3, 1, 1, level)

    def __call__(self, t):
        h = self.conv1(ad.relu(self.gn1(t)))
        h = self.conv2(ad.relu(self.gn2(h)))
        return ad.add(t, h)


class Model:
    def __init__(self, cfg, seed, dtype=np.float32):
        self.cfg = cfg
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self._rng = np.random.default_rng(self.seed)
        self._params = {}          # name -> Tensor, insertion ordered
        self._convs = []           # (name, level) in construction order
        self._build()
        del self._rng

    def _register(self, name, array):
        t = Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def _build(self):
        cfg = self.cfg
        widths = cfg.widths()
        self.stem = _Conv(self, "stem", 1, widths[0], 3, 1, 1, level=0)
        self.enc_blocks = []
        self.down = []
        for l in range(cfg.levels - 1):
            self.enc_blocks.append([
                _ResBlock(self, f"enc{l}.block{i}", widths[l], level=l)
                for i in range(cfg.blocks_per_level_encoder[l])])
            self.down.append(
                _Conv(self, f"down{l + 1}", widths[l], widths[l + 1], 3, 2, 1, level=l + 1))
        self.bottleneck = [
            _ResBlock(self, f"bottleneck.block{i}", widths[-1], level=cfg.levels - 1)
            for i in range(cfg.bottleneck_blocks)]
        self.up = {}
        self.dec_blocks = {}
        cur = widths[-1]
        for l in range(cfg.levels - 2, 0, -1):
            self.up[l] = _Conv(self, f"up{l}", cur, widths[l], 1, 1, 0, level=l)
            cur = 2 * widths[l]
            self.dec_blocks[l] = [
                _ResBlock(self, f"dec{l}.block{i}", cur, level=l)
                for i in range(cfg.blocks_per_level_decoder[l])]
        self.up[0] = _Conv(self, "up0", cur, widths[0], 1, 1, 0, level=0)
        cur = 2 * widths[0]
        self.dec_blocks[0] = [
            _ResBlock(self, "dec0.block%d" % i, cur, level=0)
            for i in range(cfg.blocks_per_level_decoder[0])]
        self.head = _Conv(self, "head", cur, 1, 1, 1, 0, level=0)

    def forward(self, x):
        """Input (n,1,d,h,w) -> logits of the same shape.

        Extents that are not divisible by 2^(levels-1) are symmetrically
        zero-padded to the next multiple and cropped back, invisibly.
        """
        div = self.cfg.divisor
        pads = []
        for n in x.data.shape[2:]:
            target = -(-n // div) * div
            lo = (target - n) // 2
            pads.append((lo, target - n - lo))
        padded = any(lo + hi > 0 for lo, hi in pads)
        if padded:
            x = ad.pad_spatial(x, tuple(pads))

        t = self.stem(x)
        skips = []
        for l in range(self.cfg.levels - 1):
            for block in self.enc_blocks[l]:
                t = block(t)
            skips.append(t)
            t = self.down[l](t)
        for block in self.bottleneck:
            t = block(t)
        for l in range(self.cfg.levels - 2, -1, -1):
            t = self.up[l](ad.upsample_trilinear(t))
            t = ad.concat_channels(skips[l], t)
            for block in self.dec_blocks[l]:
                t = block(t)
        logits = self.head(t)
        if padded:
            logits = ad.crop_spatial(logits, tuple(pads))
        return logits

    __call__ = forward

    def named_parameters(self):
        return list(self._params.items())

    def parameters(self):
        return list(self._params.values())

    def zero_grads(self):
        for p in self._params.values():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state):
        if set(state) != set(self._params):
            missing = set(self._params) - set(state)
            extra = set(state) - set(self._params)
            raise ArchMismatchError(f"parameter names differ (missing={sorted(missing)[:3]}, "
                                    f"extra={sorted(extra)[:3]})")
        for name, arr in state.items():
            p = self._params[name]
            arr = np.asarray(arr)
            if arr.shape != p.data.shape:
                raise ArchMismatchError(
                    f"{name}: shape {arr.shape} != expected {p.data.shape}")
            p.data = arr.astype(self.dtype, copy=True)

    def count_conv_layers(self, at_level=None):
        if at_level is None:
            return len(self._convs)
        return sum(1 for _, lvl in self._convs if lvl == at_level)


def build_model(cfg, seed, dtype=np.float32):
    """Deterministic construction: He-normal conv weights, zero biases/beta, unit gamma."""
    if isinstance(cfg, str):
        cfg = preset(cfg)
    return Model(cfg, seed, dtype=dtype)


def count_conv_layers(model, at_level=None):
    return model.count_conv_layers(at_level)
