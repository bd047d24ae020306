"""Bounded ray sampling, field evaluation in canonical space, and quadrature.

Per ray: intersect the dilated posed-body box, sample the segment, pull each
sample back to canonical space (inverse skinning), push it to the observation
space for feature lookup, evaluate the conditioned field, and integrate.
Rays missing the box get the background color with zero mask; samples with
degenerate blends or escaping the canonical domain contribute zero density.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .bodymodel import forward_kinematics
from .cameras import pixel_rays, ray_box_intersect_batch
from .deformation import deform_forward, deform_inverse_batch
from .features import ViewBundle, fuse, sample_feature
from .field import DOMAIN_LIMIT, eval_field


class RenderError(Exception):
    pass


@dataclass
class RenderRequest:
    """One rendering job: target view/pose plus the conditioning bundle."""

    target_camera: object
    target_pose: object               # BodyParams of the pose being rendered
    observation_pose: object          # BodyParams the bundle images observe
    bundle: ViewBundle
    samples_per_ray: int = 128
    pixels: np.ndarray | None = None  # (n, 2) ray batch, or None = full frame

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise RenderError("samples_per_ray must be >= 2")


@dataclass
class RenderOutput:
    color: np.ndarray                 # (h, w, 3) or (n, 3)
    mask: np.ndarray                  # (h, w) or (n,)
    depth: np.ndarray | None = None   # expected termination depth


@dataclass
class RayAux:
    """Per-sample byproducts the training losses feed on."""

    x_canonical: np.ndarray           # (m, 3) valid canonical sample points
    f_geo: object = None              # (m, feat) tensor
    canon_dist: np.ndarray = None     # (m,) distance to nearest canonical vertex
    canon_index: np.ndarray = None    # (m,) nearest canonical vertex index


def sample_ray(t_near, t_far, n, stratified=False, rng=None):
    """n sample positions in [t_near, t_far]: midpoints, or one uniform draw
    per equal sub-interval when stratified."""
    if t_far <= t_near:
        return None
    edges = np.linspace(t_near, t_far, n + 1)
    if stratified:
        if rng is None:
            raise RenderError("stratified sampling needs an rng")
        u = rng.random(n)
    else:
        u = 0.5
    return edges[:-1] + u * (edges[1:] - edges[:-1])


def _sample_matrix(t0, t1, n, stratified, rng, dtype=np.float64):
    """(r, n) sample positions for r segments at once."""
    t0 = np.asarray(t0, dtype=dtype)[:, None]
    t1 = np.asarray(t1, dtype=dtype)[:, None]
    k = np.arange(n, dtype=dtype)[None, :]
    if stratified:
        u = rng.random((len(t0), n))
    else:
        u = 0.5
    return t0 + (k + u) / n * (t1 - t0)


def integrate_ray(ts, t_far, sigma, color):
    """Quadrature for one ray from plain arrays; returns (color, mask, T_final).

    alpha_k = 1 - exp(-sigma_k * delta_k) with delta_k = t_{k+1} - t_k and the
    last delta closing the segment at t_far; transmittance accumulates as
    exp(-sum tau), which equals the product of (1 - alpha) exactly.
    """
    ts = np.asarray(ts, dtype=np.float64)
    if ts.ndim != 1 or (np.diff(ts) < 0).any():
        raise RenderError("integrate_ray requires ascending sample positions")
    sigma_t = ad.Tensor(np.asarray(sigma, dtype=np.float64)[None, :], dtype=np.float64)
    color_t = ad.Tensor(np.asarray(color, dtype=np.float64)[None, :, :], dtype=np.float64)
    out_c, out_m, out_t = integrate_batch(ts[None, :], np.array([t_far]), sigma_t, color_t)
    return out_c.data[0], float(out_m.data[0]), float(out_t.data[0])


def _deltas(ts, t_far):
    d = np.diff(ts, axis=1)
    last = np.asarray(t_far)[:, None] - ts[:, -1:]
    return np.concatenate([d, np.maximum(last, 0.0)], axis=1)


def integrate_batch(ts, t_far, sigma, color):
    """Batched quadrature; ts (r, k) ndarray, sigma (r, k) / color (r, k, 3)
    tensors.  Returns (color (r, 3), mask (r,), T_final (r,)) tensors."""
    deltas = _deltas(ts, t_far).astype(sigma.dtype)
    tau = ad.mul(sigma, ad.Tensor(deltas))
    incl = ad.cumsum(tau, axis=1)
    excl = ad.sub(incl, tau)
    trans = ad.exp(ad.neg(excl))                       # T_k
    alpha = ad.sub(ad.Tensor(np.asarray(1.0, dtype=sigma.dtype)), ad.exp(ad.neg(tau)))
    weights = ad.mul(trans, alpha)                     # (r, k)
    out_color = ad.tsum(ad.mul(ad.reshape(weights, (*weights.shape, 1)), color), axis=1)
    t_final = ad.exp(ad.neg(ad.tsum(tau, axis=1)))
    mask = ad.sub(ad.Tensor(np.asarray(1.0, dtype=sigma.dtype)), t_final)
    return out_color, mask, t_final


@dataclass
class RayRenderResult:
    color: object                     # (r, 3) tensor
    mask: object                      # (r,) tensor
    hit: np.ndarray                   # (r,) bool
    depth: np.ndarray = None
    aux: RayAux = None


def render_rays(origins, dirs, target_state, obs_state, bundle, model,
                n_samples, margin=0.05, stratified=False, rng=None,
                background=(0.0, 0.0, 0.0), collect_aux=False):
    """Render a batch of rays through the deformed canonical field."""
    cfg = model.field_cfg
    params = model.params
    dtype = params["mlp1.0.w"].dtype
    r = len(origins)
    box = target_state.bounding_box(margin)
    t0, t1, hit = ray_box_intersect_batch(origins, dirs, box)
    bg = np.asarray(background, dtype=dtype)

    if not hit.any():
        color = ad.Tensor(np.tile(bg, (r, 1)))
        mask = ad.Tensor(np.zeros(r, dtype=dtype))
        return RayRenderResult(color=color, mask=mask, hit=hit,
                               depth=np.zeros(r),
                               aux=RayAux(x_canonical=np.zeros((0, 3))))

    hi = np.flatnonzero(hit)
    ts = _sample_matrix(t0[hi], t1[hi], n_samples, stratified, rng)
    pts = origins[hi][:, None, :] + ts[:, :, None] * dirs[hi][:, None, :]
    flat = pts.reshape(-1, 3)

    x_c, valid = deform_inverse_batch(flat, target_state)
    x_norm = model.domain.normalize(x_c)
    # points past the encoding domain are far-field: zero density
    valid &= (np.abs(x_norm) <= DOMAIN_LIMIT - 0.05).all(axis=1)
    vidx = np.flatnonzero(valid)

    rh, k = ts.shape
    aux = None
    if vidx.size == 0:
        sigma_full = ad.Tensor(np.zeros((rh, k), dtype=dtype))
        color_full = ad.Tensor(np.zeros((rh, k, 3), dtype=dtype))
        if collect_aux:
            aux = RayAux(x_canonical=np.zeros((0, 3)))
    else:
        xc_valid = x_c[vidx]
        x_o = deform_forward(xc_valid, obs_state)
        tokens = ad.stack([sample_feature(bundle, i, x_o)[0]
                           for i in range(bundle.num_views)], axis=1)
        f_geo = fuse(tokens, params, "geo", cfg)
        f_color = fuse(tokens, params, "color", cfg)
        xt = ad.Tensor(np.ascontiguousarray(x_norm[vidx]), dtype=dtype)
        sigma_v, color_v, _ = eval_field(xt, f_geo, f_color, params, cfg)
        sigma_full = ad.reshape(ad.scatter_add(sigma_v, vidx, (rh * k,)), (rh, k))
        color_full = ad.reshape(ad.scatter_add(color_v, vidx, (rh * k, 3)), (rh, k, 3))
        if collect_aux:
            dist, cidx = target_state.model.canonical_tree.query(xc_valid)
            aux = RayAux(x_canonical=xc_valid, f_geo=f_geo,
                         canon_dist=np.atleast_1d(dist), canon_index=np.atleast_1d(cidx))

    c_hit, m_hit, _ = integrate_batch(ts, t1[hi], sigma_full, color_full)

    # expected termination depth (diagnostic output, computed outside the graph)
    with ad.no_grad():
        deltas = _deltas(ts, t1[hi])
        tau = sigma_full.data * deltas
        trans = np.exp(-(np.cumsum(tau, axis=1) - tau))
        w = trans * (1.0 - np.exp(-tau))
        depth_hit = (w * ts).sum(axis=1)

    # scatter to the full ray set; missed rays show the background
    color = ad.scatter_add(c_hit, hi, (r, 3))
    mask = ad.scatter_add(m_hit, hi, (r,))
    if bg.any():
        bg_img = np.zeros((r, 3), dtype=dtype)
        bg_img[~hit] = bg
        color = ad.add(color, ad.Tensor(bg_img))
    depth = np.zeros(r)
    depth[hi] = depth_hit
    return RayRenderResult(color=color, mask=mask, hit=hit, depth=depth, aux=aux)


def render(request, model, body, chunk_rays=2048, margin=0.05,
           background=(0.0, 0.0, 0.0), threads=1):
    """Render a full frame (or a pixel batch) under no_grad.

    Returns a RenderOutput with images shaped by the camera resolution when
    `request.pixels` is None.
    """
    cam = request.target_camera
    target_state = forward_kinematics(body, request.target_pose)
    obs_state = forward_kinematics(body, request.observation_pose)

    if request.pixels is None:
        xs, ys = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
        pixels = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1).astype(np.float64)
    else:
        pixels = np.asarray(request.pixels, dtype=np.float64)

    origins, dirs = pixel_rays(cam, pixels)
    n = len(pixels)
    color = np.zeros((n, 3), dtype=np.float32)
    mask = np.zeros(n, dtype=np.float32)
    depth = np.zeros(n, dtype=np.float32)

    chunks = [slice(s, min(s + chunk_rays, n)) for s in range(0, n, chunk_rays)]

    def run_chunk(sl):
        with ad.no_grad():
            res = render_rays(origins[sl], dirs[sl], target_state, obs_state,
                              request.bundle, model, request.samples_per_ray,
                              margin=margin, stratified=False,
                              background=background)
        color[sl] = res.color.data
        mask[sl] = res.mask.data
        depth[sl] = res.depth

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, chunks))
    else:
        for sl in chunks:
            run_chunk(sl)

    if request.pixels is None:
        return RenderOutput(color=color.reshape(cam.height, cam.width, 3),
                            mask=mask.reshape(cam.height, cam.width),
                            depth=depth.reshape(cam.height, cam.width))
    return RenderOutput(color=color, mask=mask, depth=depth)
