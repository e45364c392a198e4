"""Finite-difference validation of every analytic backward pass.

The numeric side evaluates forward passes only (central differences, float64),
so it is independent of the gradient code it checks. Relative error per
element is |analytic - numeric| / max(1, |numeric|).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward, weighted_sum
from .loss import LossConfig, bce_loss, combined_loss, soft_dice_loss

DEFAULT_TOL = 1e-4
DEFAULT_SEEDS = (1, 2, 3)


@dataclass
class GradCheckResult:
    op: str
    seed: int
    max_rel_err: float
    tol: float

    @property
    def passed(self):
        return self.max_rel_err < self.tol


def numeric_gradient(f, array, step=1e-4):
    """Central finite differences of the scalar f() w.r.t. every array element."""
    g = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def _max_rel_err(forward, inputs, step=1e-4):
    """forward() returns the scalar output Tensor built from `inputs` tensors."""
    with Tape() as tape:
        out = forward()
    backward(tape, out)
    analytic = [t.grad.copy() for t in inputs]

    def f():
        return float(forward().data)

    worst = 0.0
    for t, a in zip(inputs, analytic):
        n = numeric_gradient(f, t.data, step=step)
        rel = np.abs(a - n) / np.maximum(1.0, np.abs(n))
        worst = max(worst, float(rel.max()))
    return worst


def _param(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _proj(rng, out):
    return np.asarray(rng.standard_normal(out.data.shape))


def _check_conv3d(seed, stride, pad):
    rng = np.random.default_rng(seed)
    x = _param(rng, (2, 4, 5, 5, 5))
    w = _param(rng, (3, 4, 3, 3, 3))
    b = _param(rng, (3,))
    p = [None]

    def forward():
        y = ad.conv3d(x, w, b, stride=stride, pad=pad)
        if p[0] is None:
            p[0] = _proj(np.random.default_rng(seed + 1000), y)
        return weighted_sum(y, p[0])

    return _max_rel_err(forward, [x, w, b])


def _check_group_norm(seed):
    rng = np.random.default_rng(seed)
    x = _param(rng, (2, 4, 5, 5, 5))
    gamma = _param(rng, (4,))
    beta = _param(rng, (4,))
    p = _proj(rng, x)

    def forward():
        return weighted_sum(ad.group_norm(x, 2, gamma, beta, eps=1e-5), p)

    return _max_rel_err(forward, [x, gamma, beta])


def _check_relu(seed):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((2, 4, 5, 5, 5))
    data += 0.3 * np.sign(data)  # keep the FD step away from the kink at 0
    x = Tensor(data, requires_grad=True)
    p = _proj(rng, x)

    def forward():
        return weighted_sum(ad.relu(x), p)

    return _max_rel_err(forward, [x])


def _check_sigmoid(seed):
    rng = np.random.default_rng(seed)
    x = _param(rng, (2, 4, 5, 5, 5))
    p = _proj(rng, x)

    def forward():
        return weighted_sum(ad.sigmoid(x), p)

    return _max_rel_err(forward, [x])


def _check_add(seed):
    rng = np.random.default_rng(seed)
    x = _param(rng, (2, 4, 5, 5, 5))
    y = _param(rng, (2, 4, 5, 5, 5))
    p = _proj(rng, x)

    def forward():
        return weighted_sum(ad.add(x, y), p)

    return _max_rel_err(forward, [x, y])


def _check_upsample(seed):
    rng = np.random.default_rng(seed)
    x = _param(rng, (2, 3, 4, 4, 4))
    p = [None]

    def forward():
        y = ad.upsample_trilinear(x)
        if p[0] is None:
            p[0] = _proj(np.random.default_rng(seed + 1000), y)
        return weighted_sum(y, p[0])

    return _max_rel_err(forward, [x])


def _check_concat(seed):
    rng = np.random.default_rng(seed)
    x = _param(rng, (2, 2, 4, 4, 4))
    y = _param(rng, (2, 3, 4, 4, 4))
    p = [None]

    def forward():
        z = ad.concat_channels(x, y)
        if p[0] is None:
            p[0] = _proj(np.random.default_rng(seed + 1000), z)
        return weighted_sum(z, p[0])

    return _max_rel_err(forward, [x, y])


def _loss_fixture(seed):
    rng = np.random.default_rng(seed)
    prob = Tensor(rng.uniform(0.05, 0.95, size=(2, 1, 4, 4, 4)), requires_grad=True)
    target = (rng.random((2, 1, 4, 4, 4)) < 0.4).astype(np.float64)
    return prob, target


def _check_bce(seed):
    prob, target = _loss_fixture(seed)
    return _max_rel_err(lambda: bce_loss(prob, target), [prob])


def _check_dice(seed):
    prob, target = _loss_fixture(seed)
    return _max_rel_err(lambda: soft_dice_loss(prob, target), [prob])


def _check_combined(seed):
    prob, target = _loss_fixture(seed)
    cfg = LossConfig(alpha=0.5)
    return _max_rel_err(lambda: combined_loss(prob, target, cfg), [prob])


CHECKS = {
    "conv3d": lambda s: _check_conv3d(s, stride=1, pad=0),
    "conv3d_pad": lambda s: _check_conv3d(s, stride=1, pad=1),
    "conv3d_stride2": lambda s: _check_conv3d(s, stride=2, pad=1),
    "group_norm": _check_group_norm,
    "relu": _check_relu,
    "sigmoid": _check_sigmoid,
    "add": _check_add,
    "upsample_trilinear": _check_upsample,
    "concat_channels": _check_concat,
    "bce_loss": _check_bce,
    "soft_dice_loss": _check_dice,
    "combined_loss": _check_combined,
}


def run_gradcheck(ops=None, seeds=DEFAULT_SEEDS, tol=DEFAULT_TOL):
    """Run the suite; returns one GradCheckResult per (op, seed)."""
    names = list(CHECKS) if not ops else list(ops)
    results = []
    for name in names:
        if name not in CHECKS:
            raise KeyError(f"unknown op {name!r}; have {sorted(CHECKS)}")
        for seed in seeds:
            err = CHECKS[name](int(seed))
            results.append(GradCheckResult(name, int(seed), err, tol))
    return results
