"""Minimal reverse-mode autodiff over dense tensors.

Exactly the operators the segmentation network needs, each with an analytic
backward pass. Activations keep the input dtype (float32 in training);
normalization statistics and reductions accumulate in float64. Recording
happens on an explicit Tape used as a context manager; one tape per thread.
"""

import threading

import numpy as np

from . import kernels
from .exceptions import (
    DetachedLossError,
    EmptyOutputError,
    IndivisibleGroupsError,
    ShapeMismatchError,
)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


_LOCAL = threading.local()


def _stack():
    if not hasattr(_LOCAL, "tapes"):
        _LOCAL.tapes = []
    return _LOCAL.tapes


class Tape:
    """Ordered record of operations; backward walks it in exact reverse."""

    def __init__(self):
        self._ops = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


def _active_tape():
    s = _stack()
    return s[-1] if s else None


def _record(out, backward_fn):
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._ops.append((out, backward_fn))


def _accum(t, g):
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _needs_grad(*tensors):
    return any(isinstance(t, Tensor) and t.requires_grad for t in tensors)


def backward(tape, loss):
    """Populate grads of every requires_grad tensor reachable from loss."""
    if not isinstance(loss, Tensor) or loss.data.ndim != 0:
        raise DetachedLossError("loss must be a scalar Tensor")
    if not any(out is loss for out, _ in tape._ops):
        raise DetachedLossError("loss was not produced on this tape")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape._ops):
        if out.grad is not None:
            fn(out.grad)


# ---------------------------------------------------------------------------
# operators


def conv3d(x, weight, bias, stride=1, pad=0):
    """3D cross-correlation with zero padding; stride 2 realizes downsampling."""
    if x.data.ndim != 5 or weight.data.ndim != 5:
        raise ShapeMismatchError("conv3d expects rank-5 input and weight")
    n, ci, D, H, W = x.data.shape
    co, wci, k, kh_, kw_ = weight.data.shape
    if wci != ci:
        raise ShapeMismatchError(f"input has {ci} channels, weight expects {wci}")
    if bias.data.shape != (co,):
        raise ShapeMismatchError(f"bias shape {bias.data.shape} != ({co},)")
    if k != kh_ or k != kw_:
        raise ShapeMismatchError("only cubic kernels are supported")
    stride = int(stride)
    pad = int(pad)
    out_sp = [(s + 2 * pad - k) // stride + 1 for s in (D, H, W)]
    if min(out_sp) < 1:
        raise EmptyOutputError(f"conv output extents {out_sp} for input {(D, H, W)}")

    y = kernels.conv3d_forward(x.data, weight.data, stride, pad)
    y = y + bias.data.astype(y.dtype).reshape(1, co, 1, 1, 1)
    out = Tensor(y, requires_grad=_needs_grad(x, weight, bias))

    def bwd(gy):
        _accum(bias, gy.sum(axis=(0, 2, 3, 4), dtype=np.float64))
        if weight.requires_grad:
            _accum(weight, kernels.conv3d_grad_weight(gy, x.data, stride, pad, weight.data.shape))
        if x.requires_grad:
            _accum(x, kernels.conv3d_grad_input(gy, weight.data, stride, pad, x.data.shape))

    _record(out, bwd)
    return out


def group_norm(x, groups, gamma, beta, eps=1e-5):
    """Normalize per (sample, channel group), then per-channel affine."""
    n, c = x.data.shape[:2]
    groups = int(groups)
    if c % groups != 0:
        raise IndivisibleGroupsError(f"{c} channels not divisible by {groups} groups")
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeMismatchError("gamma/beta must have one entry per channel")

    spatial = x.data.shape[2:]
    xg = x.data.reshape(n, groups, -1).astype(np.float64)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat64 = (xg - mean) * inv_std
    xhat = xhat64.reshape(x.data.shape).astype(x.data.dtype)
    gshape = (1, c) + (1,) * len(spatial)
    y = gamma.data.reshape(gshape) * xhat + beta.data.reshape(gshape)
    out = Tensor(y.astype(x.data.dtype, copy=False),
                 requires_grad=_needs_grad(x, gamma, beta))

    def bwd(gy):
        gy64 = gy.astype(np.float64)
        xh64 = xhat.astype(np.float64)
        _accum(beta, gy64.sum(axis=(0,) + tuple(range(2, gy.ndim))))
        _accum(gamma, (gy64 * xh64).sum(axis=(0,) + tuple(range(2, gy.ndim))))
        if x.requires_grad:
            gxh = gy64 * gamma.data.astype(np.float64).reshape(gshape)
            gxh = gxh.reshape(n, groups, -1)
            xhg = xh64.reshape(n, groups, -1)
            m1 = gxh.mean(axis=2, keepdims=True)
            m2 = (gxh * xhg).mean(axis=2, keepdims=True)
            gx = inv_std * (gxh - m1 - xhg * m2)
            _accum(x, gx.reshape(x.data.shape))

    _record(out, bwd)
    return out


def relu(x):
    out = Tensor(np.maximum(x.data, 0), requires_grad=_needs_grad(x))

    def bwd(gy):
        _accum(x, gy * (x.data > 0))

    _record(out, bwd)
    return out


def sigmoid(x):
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    out = Tensor(y.astype(x.data.dtype, copy=False), requires_grad=_needs_grad(x))

    def bwd(gy):
        _accum(x, gy * out.data * (1.0 - out.data))

    _record(out, bwd)
    return out


def add(x, y):
    if x.data.shape != y.data.shape:
        raise ShapeMismatchError(f"add shapes {x.data.shape} != {y.data.shape}")
    out = Tensor(x.data + y.data, requires_grad=_needs_grad(x, y))

    def bwd(gy):
        _accum(x, gy)
        _accum(y, gy)

    _record(out, bwd)
    return out


def scale(x, c):
    c = float(c)
    out = Tensor(x.data * c, requires_grad=_needs_grad(x))

    def bwd(gy):
        _accum(x, gy * c)

    _record(out, bwd)
    return out


def reduce_sum(x):
    out = Tensor(np.sum(x.data, dtype=np.float64), requires_grad=_needs_grad(x))

    def bwd(gy):
        _accum(x, np.broadcast_to(gy, x.data.shape))

    _record(out, bwd)
    return out


def weighted_sum(x, weights):
    """<x, weights> as a scalar; weights is a plain array, not differentiated."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.data.shape:
        raise ShapeMismatchError(f"weights shape {w.shape} != {x.data.shape}")
    out = Tensor(np.sum(x.data.astype(np.float64) * w), requires_grad=_needs_grad(x))

    def bwd(gy):
        _accum(x, gy * w)

    _record(out, bwd)
    return out


def concat_channels(x, y):
    if x.data.shape[0] != y.data.shape[0] or x.data.shape[2:] != y.data.shape[2:]:
        raise ShapeMismatchError(f"concat shapes {x.data.shape} vs {y.data.shape}")
    cx = x.data.shape[1]
    out = Tensor(np.concatenate([x.data, y.data], axis=1), requires_grad=_needs_grad(x, y))

    def bwd(gy):
        _accum(x, gy[:, :cx])
        _accum(y, gy[:, cx:])

    _record(out, bwd)
    return out


# trilinear upsampling, factor 2, cell-center coordinate convention


def _interp_indices(n_in):
    pos = (np.arange(2 * n_in) + 0.5) / 2.0 - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, pos - i0


def _upsample_axis(a, axis):
    i0, i1, w = _interp_indices(a.shape[axis])
    shape = [1] * a.ndim
    shape[axis] = len(w)
    w = w.reshape(shape)
    return np.take(a, i0, axis=axis) * (1.0 - w) + np.take(a, i1, axis=axis) * w


def _upsample_axis_adjoint(g, axis, n_in):
    i0, i1, w = _interp_indices(n_in)
    out_shape = list(g.shape)
    out_shape[axis] = n_in
    out = np.zeros(out_shape, dtype=g.dtype)
    gm = np.moveaxis(g, axis, 0)
    om = np.moveaxis(out, axis, 0)
    for o in range(gm.shape[0]):
        om[i0[o]] += gm[o] * (1.0 - w[o])
        om[i1[o]] += gm[o] * w[o]
    return out


def upsample_trilinear(x):
    """Double every spatial extent by trilinear interpolation."""
    a = x.data.astype(np.float64)
    for axis in (2, 3, 4):
        a = _upsample_axis(a, axis)
    out = Tensor(a.astype(x.data.dtype), requires_grad=_needs_grad(x))
    in_sp = x.data.shape[2:]

    def bwd(gy):
        g = gy.astype(np.float64)
        for axis in (4, 3, 2):
            g = _upsample_axis_adjoint(g, axis, in_sp[axis - 2])
        _accum(x, g)

    _record(out, bwd)
    return out


def pad_spatial(x, pads):
    """Zero-pad the three spatial axes; pads = ((lo,hi), (lo,hi), (lo,hi))."""
    full = ((0, 0), (0, 0)) + tuple(pads)
    out = Tensor(np.pad(x.data, full), requires_grad=_needs_grad(x))

    def bwd(gy):
        sl = [slice(None), slice(None)]
        for (lo, hi), n in zip(pads, x.data.shape[2:]):
            sl.append(slice(lo, lo + n))
        _accum(x, gy[tuple(sl)])

    _record(out, bwd)
    return out


def crop_spatial(x, pads):
    """Inverse of pad_spatial: drop (lo,hi) voxels per spatial axis."""
    sl = [slice(None), slice(None)]
    for (lo, hi), n in zip(pads, x.data.shape[2:]):
        sl.append(slice(lo, n - hi))
    out = Tensor(x.data[tuple(sl)].copy(), requires_grad=_needs_grad(x))

    def bwd(gy):
        full = ((0, 0), (0, 0)) + tuple(pads)
        _accum(x, np.pad(gy, full))

    _record(out, bwd)
    return out
