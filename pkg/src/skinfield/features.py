"""Per-view feature extraction and attention-based multiview fusion.

A small trainable conv net (3 -> 16 -> 32 -> C, 3x3 kernels, stride 2 on the
first layer) produces feature grids at half the image resolution.  Point
features are the bilinear feature sample concatenated with the bilinear RGB
sample; per-view tokens are fused by two independent single-head
self-attention blocks (geometry and color branches), mean-pooled over views,
and linearly projected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .cameras import project_batch
from .nnops import bilinear_sample, conv2d, he_init, linear, xavier_init


class FeatureError(Exception):
    pass


def init_encoder_params(cfg, rng, dtype=np.float32):
    chans = cfg.encoder_channels
    params = {}
    c_in = 3
    for i, c_out in enumerate(chans):
        params[f"enc.{i}.w"] = ad.parameter(
            he_init(rng, c_in * 9, (c_out, c_in, 3, 3), dtype), dtype=dtype)
        params[f"enc.{i}.b"] = ad.parameter(np.zeros(c_out), dtype=dtype)
        c_in = c_out
    return params


def encode_image(image, params, cfg):
    """RGB image (h, w, 3) in [0, 1] -> feature grid tensor (ceil(h/2), ceil(w/2), c)."""
    dtype = params["enc.0.w"].dtype
    x = ad.Tensor(np.ascontiguousarray(image.transpose(2, 0, 1)), dtype=dtype)
    n = len(cfg.encoder_channels)
    for i in range(n):
        stride = 2 if i == 0 else 1
        x = conv2d(x, params[f"enc.{i}.w"], params[f"enc.{i}.b"], stride=stride, pad=1)
        if i < n - 1:
            x = ad.relu(x)
    return ad.transpose(x, (1, 2, 0))


def encode_views(images, params, cfg):
    """Encode a list of equally-sized images; errors on mixed resolutions."""
    if not images:
        raise FeatureError("encode_views needs at least one image")
    shape = images[0].shape
    for i, img in enumerate(images):
        if img.shape != shape:
            raise FeatureError(
                f"view {i} resolution {img.shape[:2]} != view 0 resolution {shape[:2]}")
    return [encode_image(img, params, cfg) for img in images]


@dataclass
class ViewBundle:
    """Observed views: images, cameras, and their encoded feature grids."""

    images: list                      # (h, w, 3) float arrays in [0, 1]
    cameras: list
    feature_grids: list = field(default=None)   # tensors (hf, wf, c)
    image_tensors: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.image_tensors is None and self.feature_grids is not None:
            dtype = self.feature_grids[0].dtype
            self.image_tensors = [ad.Tensor(im, dtype=dtype) for im in self.images]

    @property
    def num_views(self):
        return len(self.images)

    @classmethod
    def create(cls, images, cameras, encoder_params, cfg):
        grids = encode_views(images, encoder_params, cfg)
        return cls(images=list(images), cameras=list(cameras), feature_grids=grids)


def sample_feature(bundle, view, x_o):
    """Features of observation-space points in one view.

    Returns (tokens (n, c+3) tensor, in_view (n,) bool).  Points behind the
    camera or projecting outside the image contribute a zero token and are
    flagged out-of-view (not an error: occlusion and frustum misses are
    expected).
    """
    cam = bundle.cameras[view]
    pts = np.atleast_2d(np.asarray(x_o, dtype=np.float64))
    uv, in_front = project_batch(cam, pts)
    inside = (in_front &
              (uv[:, 0] >= -0.5) & (uv[:, 0] <= cam.width - 0.5) &
              (uv[:, 1] >= -0.5) & (uv[:, 1] <= cam.height - 0.5))
    safe_uv = np.where(inside[:, None], uv, 0.0)

    grid = bundle.feature_grids[view]
    # stride-2 first conv: feature cell j is centered on image pixel 2j
    feat = bilinear_sample(grid, safe_uv / 2.0)
    rgb = bilinear_sample(bundle.image_tensors[view], safe_uv)
    tokens = ad.concat([feat, rgb], axis=1)
    gate = ad.Tensor(inside[:, None].astype(tokens.dtype))
    return ad.mul(tokens, gate), inside


_BRANCHES = ("geo", "color")


def init_fusion_params(cfg, rng, dtype=np.float32):
    token_dim = cfg.encoder_channels[-1] + 3
    a = cfg.attn_dim
    params = {}
    for branch in _BRANCHES:
        params[f"fuse.{branch}.embed.w"] = ad.parameter(
            xavier_init(rng, token_dim, a, (token_dim, a), dtype), dtype=dtype)
        params[f"fuse.{branch}.embed.b"] = ad.parameter(np.zeros(a), dtype=dtype)
        for head in ("q", "k", "v"):
            params[f"fuse.{branch}.{head}.w"] = ad.parameter(
                xavier_init(rng, a, a, (a, a), dtype), dtype=dtype)
        params[f"fuse.{branch}.out.w"] = ad.parameter(
            xavier_init(rng, a, cfg.feature_dim, (a, cfg.feature_dim), dtype), dtype=dtype)
        params[f"fuse.{branch}.out.b"] = ad.parameter(
            np.zeros(cfg.feature_dim), dtype=dtype)
    return params


def fuse(tokens, params, branch, cfg):
    """Single-head self-attention over view tokens, mean-pooled and projected.

    tokens: (b, n, token_dim) tensor for b points over n views; returns
    (b, feature_dim).  Permutation of the n views leaves the output unchanged
    up to float reduction order.
    """
    if branch not in _BRANCHES:
        raise FeatureError(f"unknown fusion branch {branch!r}")
    b, n, d = tokens.shape
    if n < 1:
        raise FeatureError("fuse requires at least one view token")
    p = lambda name: params[f"fuse.{branch}.{name}"]

    flat = ad.reshape(tokens, (b * n, d))
    x = linear(flat, p("embed.w"), p("embed.b"))
    a = x.shape[1]
    q = ad.reshape(ad.matmul(x, p("q.w")), (b, n, a))
    k = ad.reshape(ad.matmul(x, p("k.w")), (b, n, a))
    v = ad.reshape(ad.matmul(x, p("v.w")), (b, n, a))

    scale = ad.Tensor(np.asarray(1.0 / np.sqrt(a), dtype=tokens.dtype))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))), scale)   # (b, n, n)
    weights = ad.softmax(scores, axis=-1)
    attended = ad.matmul(weights, v)                                   # (b, n, a)
    pooled = ad.tmean(attended, axis=1)                                # (b, a)
    return linear(pooled, p("out.w"), p("out.b"))
