"""Pure-numpy implementations of the hot kernels.

Convolution uses a strided im2col view plus tensordot (BLAS); all
accumulation happens in float64 and results are cast back to the input
dtype, matching the numba path's accumulator precision.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def conv3d_forward(x, w, stride, pad):
    """Cross-correlation of x (n,ci,D,H,W) with w (co,ci,k,k,k), zero padding."""
    n, ci, D, H, W = x.shape
    co, _, k, _, _ = w.shape
    od = (D + 2 * pad - k) // stride + 1
    oh = (H + 2 * pad - k) // stride + 1
    ow = (W + 2 * pad - k) // stride + 1

    xp = x.astype(np.float64, copy=False)
    if pad > 0:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    sn, sc, sd, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(n, ci, od, oh, ow, k, k, k),
        strides=(sn, sc, sd * stride, sh * stride, sw * stride, sd, sh, sw),
        writeable=False,
    )
    y = np.tensordot(view, w.astype(np.float64, copy=False),
                     axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    # tensordot output is (n, od, oh, ow, co)
    return np.ascontiguousarray(np.moveaxis(y, -1, 1)).astype(x.dtype, copy=False)


def conv3d_grad_input(gy, w, stride, pad, in_shape):
    """Gradient w.r.t. the convolution input (col2im scatter over kernel taps)."""
    n, ci, D, H, W = in_shape
    co, _, k, _, _ = w.shape
    od, oh, ow = gy.shape[2:]

    gy64 = gy.astype(np.float64, copy=False)
    w64 = w.astype(np.float64, copy=False)
    gxp = np.zeros((n, ci, D + 2 * pad, H + 2 * pad, W + 2 * pad))
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                # (n,od,oh,ow,ci) contribution of this kernel tap
                t = np.tensordot(gy64, w64[:, :, kd, kh, kw], axes=([1], [0]))
                gxp[:, :, kd:kd + od * stride:stride,
                    kh:kh + oh * stride:stride,
                    kw:kw + ow * stride:stride] += np.moveaxis(t, -1, 1)
    if pad > 0:
        gxp = gxp[:, :, pad:pad + D, pad:pad + H, pad:pad + W]
    return gxp.astype(gy.dtype, copy=False)


def conv3d_grad_weight(gy, x, stride, pad, w_shape):
    """Gradient w.r.t. the convolution weights."""
    co, ci, k, _, _ = w_shape
    n = x.shape[0]
    od, oh, ow = gy.shape[2:]

    xp = x.astype(np.float64, copy=False)
    if pad > 0:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    sn, sc, sd, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(n, ci, od, oh, ow, k, k, k),
        strides=(sn, sc, sd * stride, sh * stride, sw * stride, sd, sh, sw),
        writeable=False,
    )
    gw = np.tensordot(gy.astype(np.float64, copy=False), view,
                      axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return gw.astype(gy.dtype, copy=False)


def directed_surface_distances(src, dst, spacing):
    """Min Euclidean distance (mm) from each src surface voxel to the dst set.

    src, dst: (m,3)/(r,3) integer voxel coordinates; spacing: (sx,sy,sz).
    Chunked so the all-pairs block never exceeds a few million entries.
    """
    sx, sy, sz = spacing
    s = np.asarray(src, dtype=np.float64)
    d = np.asarray(dst, dtype=np.float64)
    out = np.empty(len(s))
    step = max(1, 4_000_000 // max(1, len(d)))
    for i in range(0, len(s), step):
        blk = s[i:i + step]
        dx = (blk[:, 0:1] - d[None, :, 0]) * sx
        dy = (blk[:, 1:2] - d[None, :, 1]) * sy
        dz = (blk[:, 2:3] - d[None, :, 2]) * sz
        d2 = dx * dx + dy * dy + dz * dz
        out[i:i + step] = np.sqrt(d2.min(axis=1))
    return out
