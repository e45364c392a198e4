"""Numba @njit implementations of the hot kernels.

Loop nests are sequential with float64 accumulators, so results are bitwise
reproducible run to run. fastmath stays off: the finite-difference gradient
suite and the brute-force distance oracle assume IEEE ordering.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def conv3d_forward(x, w, stride, pad):
    n, ci, D, H, W = x.shape
    co = w.shape[0]
    k = w.shape[2]
    od = (D + 2 * pad - k) // stride + 1
    oh = (H + 2 * pad - k) // stride + 1
    ow = (W + 2 * pad - k) // stride + 1
    out = np.empty((n, co, od, oh, ow), dtype=x.dtype)
    for b in range(n):
        for o in range(co):
            for zo in range(od):
                z0 = zo * stride - pad
                for yo in range(oh):
                    y0 = yo * stride - pad
                    for xo in range(ow):
                        x0 = xo * stride - pad
                        acc = 0.0
                        for c in range(ci):
                            for kd in range(k):
                                z = z0 + kd
                                if z < 0 or z >= D:
                                    continue
                                for kh in range(k):
                                    y = y0 + kh
                                    if y < 0 or y >= H:
                                        continue
                                    for kw in range(k):
                                        xx = x0 + kw
                                        if xx < 0 or xx >= W:
                                            continue
                                        acc += float(x[b, c, z, y, xx]) * float(w[o, c, kd, kh, kw])
                        out[b, o, zo, yo, xo] = acc
    return out


@njit(cache=True)
def conv3d_grad_input(gy, w, stride, pad, in_shape):
    n, ci, D, H, W = in_shape
    co = w.shape[0]
    k = w.shape[2]
    od, oh, ow = gy.shape[2], gy.shape[3], gy.shape[4]
    gx = np.empty((n, ci, D, H, W), dtype=gy.dtype)
    for b in range(n):
        for c in range(ci):
            for z in range(D):
                for y in range(H):
                    for xx in range(W):
                        acc = 0.0
                        for kd in range(k):
                            tz = z + pad - kd
                            if tz < 0 or tz % stride != 0:
                                continue
                            zo = tz // stride
                            if zo >= od:
                                continue
                            for kh in range(k):
                                ty = y + pad - kh
                                if ty < 0 or ty % stride != 0:
                                    continue
                                yo = ty // stride
                                if yo >= oh:
                                    continue
                                for kw in range(k):
                                    tx = xx + pad - kw
                                    if tx < 0 or tx % stride != 0:
                                        continue
                                    xo = tx // stride
                                    if xo >= ow:
                                        continue
                                    for o in range(co):
                                        acc += float(gy[b, o, zo, yo, xo]) * float(w[o, c, kd, kh, kw])
                        gx[b, c, z, y, xx] = acc
    return gx


@njit(cache=True)
def conv3d_grad_weight(gy, x, stride, pad, w_shape):
    co, ci, k = w_shape[0], w_shape[1], w_shape[2]
    n, _, D, H, W = x.shape
    od, oh, ow = gy.shape[2], gy.shape[3], gy.shape[4]
    gw = np.empty((co, ci, k, k, k), dtype=gy.dtype)
    for o in range(co):
        for c in range(ci):
            for kd in range(k):
                for kh in range(k):
                    for kw in range(k):
                        acc = 0.0
                        for b in range(n):
                            for zo in range(od):
                                z = zo * stride - pad + kd
                                if z < 0 or z >= D:
                                    continue
                                for yo in range(oh):
                                    y = yo * stride - pad + kh
                                    if y < 0 or y >= H:
                                        continue
                                    for xo in range(ow):
                                        xx = xo * stride - pad + kw
                                        if xx < 0 or xx >= W:
                                            continue
                                        acc += float(gy[b, o, zo, yo, xo]) * float(x[b, c, z, y, xx])
                        gw[o, c, kd, kh, kw] = acc
    return gw


@njit(cache=True)
def _directed_min_sqdist(src, dst, sx, sy, sz):
    m = src.shape[0]
    out = np.empty(m)
    for i in range(m):
        best = np.inf
        for j in range(dst.shape[0]):
            dx = (src[i, 0] - dst[j, 0]) * sx
            dy = (src[i, 1] - dst[j, 1]) * sy
            dz = (src[i, 2] - dst[j, 2]) * sz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best:
                best = d2
        out[i] = math.sqrt(best)
    return out


def directed_surface_distances(src, dst, spacing):
    """Min Euclidean distance (mm) from each src surface voxel to the dst set."""
    s = np.ascontiguousarray(np.asarray(src, dtype=np.float64))
    d = np.ascontiguousarray(np.asarray(dst, dtype=np.float64))
    return _directed_min_sqdist(s, d, float(spacing[0]), float(spacing[1]), float(spacing[2]))
