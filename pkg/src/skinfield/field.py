"""Canonical-space radiance field: positional encoding and conditioned MLPs.

The density branch consumes the encoded canonical position concatenated with
the fused geometry feature; the color branch consumes the density branch's
hidden feature concatenated with the fused color feature (it replaces the view
direction input of a vanilla positional-encoding field).  Density goes through
a shifted softplus log(1 + exp(x - 1)); color through a widened sigmoid with
range [-eps, 1 + eps].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nnops import he_init, linear


class OutOfDomainError(Exception):
    """Canonical coordinate escaped the normalized box: bad upstream scaling."""


DOMAIN_LIMIT = 1.5


@dataclass
class CanonicalDomain:
    """Isotropic map from canonical world coords to the [-1, 1]^3 encoding box.

    A single scale keeps spatial gradients direction-true: world-space
    gradients are normalized-space gradients divided by `scale`.
    """

    center: np.ndarray
    scale: float

    @classmethod
    def from_model(cls, model, margin=0.1):
        box = model.canonical_aabb(margin)
        half = (box.hi - box.lo) / 2.0
        return cls(center=box.center, scale=float(half.max()))

    def normalize(self, x_world):
        return (np.asarray(x_world) - self.center) / self.scale

    def denormalize(self, x_norm):
        return np.asarray(x_norm) * self.scale + self.center

    def to_json(self):
        return {"center": self.center.tolist(), "scale": self.scale}

    @classmethod
    def from_json(cls, d):
        return cls(center=np.asarray(d["center"], dtype=np.float64),
                   scale=float(d["scale"]))


def positional_encoding(x, num_frequencies):
    """gamma(x): [x, sin(2^0 pi x), cos(2^0 pi x), ..., cos(2^(L-1) pi x)].

    `x` is a (n, 3) tensor of box-normalized coordinates; output is
    (n, 3 + 6L).  Coordinates beyond +-1.5 raise OutOfDomainError.
    """
    limit = float(np.max(np.abs(x.data))) if x.size else 0.0
    if limit > DOMAIN_LIMIT:
        raise OutOfDomainError(
            f"coordinate magnitude {limit:.3f} exceeds {DOMAIN_LIMIT}; "
            "normalize inputs by the canonical box first")
    parts = [x]
    for k in range(num_frequencies):
        freq = np.asarray((2.0 ** k) * np.pi, dtype=x.dtype)
        scaled = ad.mul(x, ad.Tensor(freq))
        parts.append(ad.sin(scaled))
        parts.append(ad.cos(scaled))
    return ad.concat(parts, axis=1)


def init_field_params(cfg, rng, dtype=np.float32):
    """Fresh MLP parameters; names are flat keys in the unified checkpoint."""
    params = {}

    def lin(name, fan_in, fan_out, last=False):
        std_scale = 0.01 if last else 1.0
        w = he_init(rng, fan_in, (fan_in, fan_out), dtype) * std_scale
        params[f"{name}.w"] = ad.parameter(w, dtype=dtype)
        params[f"{name}.b"] = ad.parameter(np.zeros(fan_out), dtype=dtype)

    enc = cfg.encoding_dim
    width = cfg.mlp1_width
    in_dim = enc + cfg.feature_dim
    for i in range(cfg.mlp1_layers):
        d_in = in_dim if i == 0 else (width + enc if i == cfg.skip_layer else width)
        lin(f"mlp1.{i}", d_in, width)
    lin("mlp1.sigma", width, 1, last=True)
    lin("mlp1.feat", width, width)

    w2 = cfg.mlp2_width
    d_in = width + cfg.feature_dim
    for i in range(cfg.mlp2_hidden_layers):
        lin(f"mlp2.{i}", d_in if i == 0 else w2, w2)
    lin("mlp2.out", w2, 3, last=True)
    return params


def _mlp1_trunk(gamma, f_geo, params, cfg):
    h = ad.concat([gamma, f_geo], axis=1)
    for i in range(cfg.mlp1_layers):
        if i == cfg.skip_layer:
            h = ad.concat([h, gamma], axis=1)
        h = ad.relu(linear(h, params[f"mlp1.{i}.w"], params[f"mlp1.{i}.b"]))
    return h


def eval_density(x_norm, f_geo, params, cfg):
    """Density only (grid extraction path): sigma (n,) tensor."""
    gamma = positional_encoding(x_norm, cfg.pe_frequencies)
    h = _mlp1_trunk(gamma, f_geo, params, cfg)
    raw = linear(h, params["mlp1.sigma.w"], params["mlp1.sigma.b"])
    return ad.reshape(ad.shifted_softplus(raw), (-1,))


def eval_field(x_norm, f_geo, f_color, params, cfg):
    """Full field: (sigma (n,), color (n, 3), hidden (n, width)).

    x_norm: (n, 3) tensor of box-normalized canonical points.
    """
    gamma = positional_encoding(x_norm, cfg.pe_frequencies)
    trunk = _mlp1_trunk(gamma, f_geo, params, cfg)
    raw_sigma = linear(trunk, params["mlp1.sigma.w"], params["mlp1.sigma.b"])
    sigma = ad.reshape(ad.shifted_softplus(raw_sigma), (-1,))
    hidden = linear(trunk, params["mlp1.feat.w"], params["mlp1.feat.b"])

    h = ad.concat([hidden, f_color], axis=1)
    for i in range(cfg.mlp2_hidden_layers):
        h = ad.relu(linear(h, params[f"mlp2.{i}.w"], params[f"mlp2.{i}.b"]))
    raw_c = linear(h, params["mlp2.out.w"], params["mlp2.out.b"])
    color = ad.widened_sigmoid(raw_c, cfg.color_widen_eps)
    return sigma, color, hidden


def density_normals(x_world, f_geo, params, cfg, domain, create_graph=False,
                    norm_floor=1e-8):
    """Unit spatial gradients of density at canonical world points.

    Returns (normals tensor (m, 3), keep (n,) bool): rows whose gradient norm
    falls below `norm_floor` are dropped (normal undefined there).  With
    create_graph=True the normals stay differentiable w.r.t. the field
    parameters, which the smoothness/shape losses require.
    """
    x_norm = domain.normalize(np.asarray(x_world, dtype=np.float64))
    xt = ad.Tensor(np.ascontiguousarray(x_norm), requires_grad=True,
                   dtype=f_geo.dtype)
    sigma = eval_density(xt, f_geo, params, cfg)
    (g_norm,) = ad.grad(ad.tsum(sigma), [xt], create_graph=create_graph)
    # world-space gradient: divide by the isotropic domain scale
    g_world = ad.mul(g_norm, ad.Tensor(np.asarray(1.0 / domain.scale, dtype=g_norm.dtype)))
    norms = np.linalg.norm(g_world.data, axis=1)
    keep = norms >= norm_floor
    if not keep.all():
        g_world = ad.getitem(g_world, np.flatnonzero(keep))
    length = ad.sqrt(ad.tsum(ad.square(g_world), axis=1, keepdims=True))
    return ad.div(g_world, length), keep
