"""Neural-net building blocks composed from autodiff primitives.

conv2d and bilinear_sample are expressed as gather + matmul + arithmetic so
their backward rules (and higher-order gradients) come for free from the
primitive set.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def linear(x, w, b=None):
    """x @ w (+ b); x is (..., in), w is (in, out), b is (out,)."""
    out = ad.matmul(x, w)
    if b is not None:
        out = ad.add(out, b)
    return out


def _im2col_indices(cin, h, w, kh, kw, stride, pad):
    """Flat gather indices turning a padded (cin, hp, wp) image into columns.

    Returns (indices, hout, wout); indices has shape (cin*kh*kw, hout*wout)
    and addresses the flattened padded image.
    """
    hp, wp = h + 2 * pad, w + 2 * pad
    hout = (hp - kh) // stride + 1
    wout = (wp - kw) // stride + 1
    c_idx = np.repeat(np.arange(cin), kh * kw)                       # (cin*kh*kw,)
    ky, kx = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
    ky = np.tile(ky.reshape(-1), cin)
    kx = np.tile(kx.reshape(-1), cin)
    oy, ox = np.meshgrid(np.arange(hout) * stride, np.arange(wout) * stride, indexing="ij")
    oy = oy.reshape(-1)
    ox = ox.reshape(-1)
    rows = ky[:, None] + oy[None, :]
    cols = kx[:, None] + ox[None, :]
    flat = c_idx[:, None] * (hp * wp) + rows * wp + cols
    return flat, hout, wout


_IM2COL_CACHE = {}


def conv2d(x, w, b, stride=1, pad=1):
    """2-D convolution on a single image.

    x: (cin, h, w) tensor; w: (cout, cin, kh, kw); b: (cout,).
    Output: (cout, hout, wout) with hout = (h + 2*pad - kh)//stride + 1.
    """
    cin, h, wid = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ad.ShapeMismatchError(
            f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    if h + 2 * pad < kh or wid + 2 * pad < kw:
        raise ad.ShapeMismatchError(
            f"conv2d spatial dims too small: input {x.shape}, kernel {(kh, kw)}, pad {pad}")
    key = (cin, h, wid, kh, kw, stride, pad)
    cached = _IM2COL_CACHE.get(key)
    if cached is None:
        cached = _im2col_indices(cin, h, wid, kh, kw, stride, pad)
        _IM2COL_CACHE[key] = cached
    flat_idx, hout, wout = cached

    xp = ad.pad2d(x, pad)
    cols = ad.getitem(ad.reshape(xp, (-1,)), flat_idx)               # (cin*kh*kw, hout*wout)
    w2 = ad.reshape(w, (cout, cin * kh * kw))
    out = ad.matmul(w2, cols)                                        # (cout, hout*wout)
    out = ad.add(out, ad.reshape(b, (cout, 1)))
    return ad.reshape(out, (cout, hout, wout))


def bilinear_sample(grid, coords):
    """Bilinear interpolation of a (h, w, c) grid at float pixel coords.

    coords: constant ndarray (n, 2) in (x, y) order, where (0, 0) is the
    center of the top-left cell.  Coordinates are clamped to the grid, so
    callers must mask out-of-view points themselves.  Differentiable w.r.t.
    the grid values only.
    """
    h, w = grid.shape[0], grid.shape[1]
    coords = np.asarray(coords, dtype=np.float64)
    x = np.clip(coords[:, 0], 0.0, w - 1.0)
    y = np.clip(coords[:, 1], 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0).astype(grid.dtype)
    fy = (y - y0).astype(grid.dtype)

    flat = ad.reshape(grid, (h * w, grid.shape[2]))
    v00 = ad.getitem(flat, y0 * w + x0)
    v01 = ad.getitem(flat, y0 * w + x1)
    v10 = ad.getitem(flat, y1 * w + x0)
    v11 = ad.getitem(flat, y1 * w + x1)

    wx1 = ad.Tensor(fx[:, None])
    wy1 = ad.Tensor(fy[:, None])
    wx0 = ad.Tensor((1.0 - fx)[:, None])
    wy0 = ad.Tensor((1.0 - fy)[:, None])

    top = ad.add(ad.mul(v00, wx0), ad.mul(v01, wx1))
    bot = ad.add(ad.mul(v10, wx0), ad.mul(v11, wx1))
    return ad.add(ad.mul(top, wy0), ad.mul(bot, wy1))


def he_init(rng, fan_in, shape, dtype=np.float32):
    """Kaiming-normal init for ReLU layers."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def xavier_init(rng, fan_in, fan_out, shape, dtype=np.float32):
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return (rng.standard_normal(shape) * std).astype(dtype)
