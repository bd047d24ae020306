"""Volume deformation by linear blend skinning.

Forward maps canonical-space points to a posed space; inverse maps posed
points back to canonical by inverting the blended affine.  Weight lookup uses
the mesh living in the same space as the query point: the canonical mesh for
forward queries, the posed mesh for inverse queries.

The maps are exact on mesh vertices and approximate elsewhere; off-surface
round trips between different poses are an approximation of the true
correspondence field, which downstream rendering tolerates because far-field
density is learned to be zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bodymodel import PoseState, skinning_weights_at

# A blended affine mixing incompatibly rotated parts can be near-singular;
# beyond this conditioning the sample is flagged degenerate instead of
# producing a garbage point (the renderer maps such samples to zero density).
CONDITION_LIMIT = 1e8


class DegenerateBlendError(Exception):
    """Blended skinning transform is numerically singular."""


@dataclass
class DeformationField:
    """Bound deformation: a pose state plus the mapping direction."""

    state: PoseState
    direction: str  # "forward" (canonical -> posed) or "inverse" (posed -> canonical)

    def __call__(self, x):
        if self.direction == "forward":
            return deform_forward(x, self.state)
        return deform_inverse(x, self.state)


def _blend_transforms(weights, transforms):
    """(n, J) weights x (J, 4, 4) transforms -> (n, 3, 4) affines."""
    return np.einsum("nj,jab->nab", weights, transforms[:, :3, :])


def deform_forward(x_c, state):
    """Canonical-space point(s) -> posed space, weights from the canonical mesh."""
    single = np.asarray(x_c).ndim == 1
    pts = np.atleast_2d(np.asarray(x_c, dtype=np.float64))
    weights, _, _ = skinning_weights_at(state.model, pts)
    blended = _blend_transforms(weights, state.transforms)
    out = np.einsum("nab,nb->na", blended[:, :, :3], pts) + blended[:, :, 3]
    return out[0] if single else out


def deform_inverse(x_t, state):
    """Posed-space point(s) -> canonical space, weights from the posed mesh.

    Single-point calls raise DegenerateBlendError on an ill-conditioned blend;
    the batch variant returns a validity mask instead.
    """
    single = np.asarray(x_t).ndim == 1
    pts = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    out, valid = deform_inverse_batch(pts, state)
    if single:
        if not valid[0]:
            raise DegenerateBlendError(
                f"blended transform at {np.asarray(x_t)} exceeds condition limit")
        return out[0]
    return out, valid


def deform_inverse_batch(pts, state):
    """Vectorized inverse LBS; returns (canonical points (n,3), valid (n,))."""
    pts = np.asarray(pts, dtype=np.float64)
    weights, _, _ = skinning_weights_at(state, pts)
    blended = _blend_transforms(weights, state.transforms)
    a = blended[:, :, :3]
    t = blended[:, :, 3]
    det = np.linalg.det(a)
    # Frobenius-based conditioning estimate: ||A||_F * ||A^-1||_F bounds the
    # 2-norm condition number within a factor of 3.
    valid = np.abs(det) > 1e-30
    inv = np.zeros_like(a)
    if valid.any():
        inv[valid] = np.linalg.inv(a[valid])
        cond = (np.linalg.norm(a[valid], axis=(1, 2)) *
                np.linalg.norm(inv[valid], axis=(1, 2)))
        ok = cond <= CONDITION_LIMIT
        valid_idx = np.flatnonzero(valid)
        valid[valid_idx[~ok]] = False
    out = np.einsum("nab,nb->na", inv, pts - t)
    out[~valid] = 0.0
    return out, valid


def deform_target_to_observation(x_t, target, obs):
    """Posed target point(s) -> observation space via the canonical space."""
    single = np.asarray(x_t).ndim == 1
    if single:
        x_c = deform_inverse(x_t, target)
        return deform_forward(x_c, obs)
    x_c, valid = deform_inverse_batch(np.asarray(x_t), target)
    out = deform_forward(x_c, obs)
    out[~valid] = 0.0
    return out, valid
