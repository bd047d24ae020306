"""Proxy 3D shape extraction: density grid -> marching cubes -> mesh file.

Voxel centers live in the target pose space; each is pulled back to canonical
space, conditioned on the observation bundle, and scored by the density
network.  Occupancy alpha = 1 - exp(-sigma * voxel_edge) is thresholded (0.5
by default) by the classic marching-cubes triangulation with edge-interpolated
vertices.  No post-smoothing is applied to the extracted mesh.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .cameras import Aabb
from .deformation import deform_forward, deform_inverse_batch
from .features import fuse, sample_feature
from .field import DOMAIN_LIMIT, eval_density
from .mc_tables import EDGE_TABLE, EDGE_VERTS, TRI_TABLE, VERT_OFFSETS


@dataclass
class DensityGrid:
    resolution: tuple            # (nx, ny, nz)
    box: Aabb
    values: np.ndarray           # occupancy per voxel center, shape (nx, ny, nz)

    def __post_init__(self):
        if min(self.resolution) < 2:
            raise ValueError("grid resolution must be >= 2 per axis")
        if not np.isfinite(self.values).all():
            raise ValueError("grid contains non-finite values")

    def centers_axis(self, axis):
        n = self.resolution[axis]
        lo, hi = self.box.lo[axis], self.box.hi[axis]
        edge = (hi - lo) / n
        return lo + (np.arange(n) + 0.5) * edge

    @property
    def voxel_edge(self):
        return float((self.box.hi[0] - self.box.lo[0]) / self.resolution[0])


def default_extraction_box(state, size=2.0):
    """Cube of `size` meters centered on the posed body."""
    center = state.bounding_box(0.0).center
    half = size / 2.0
    return Aabb(center - half, center + half)


def evaluate_grid(model, bundle, target_state, obs_state, box=None,
                  resolution=256, chunk=16384):
    """Occupancy grid of the deformed canonical field.

    Degenerate-blend and out-of-domain voxels get occupancy 0.
    """
    if box is None:
        box = default_extraction_box(target_state)
    if np.isscalar(resolution):
        resolution = (int(resolution),) * 3
    nx, ny, nz = resolution
    edge = float((box.hi[0] - box.lo[0]) / nx)
    axes = [box.lo[a] + (np.arange(resolution[a]) + 0.5) *
            ((box.hi[a] - box.lo[a]) / resolution[a]) for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.reshape(-1), gy.reshape(-1), gz.reshape(-1)], axis=1)

    cfg = model.field_cfg
    params = model.params
    dtype = params["mlp1.0.w"].dtype
    sigma = np.zeros(len(pts), dtype=np.float64)
    with ad.no_grad():
        for start in range(0, len(pts), chunk):
            sl = slice(start, min(start + chunk, len(pts)))
            x_c, valid = deform_inverse_batch(pts[sl], target_state)
            x_norm = model.domain.normalize(x_c)
            valid &= (np.abs(x_norm) <= DOMAIN_LIMIT - 0.05).all(axis=1)
            vidx = np.flatnonzero(valid)
            if vidx.size == 0:
                continue
            x_o = deform_forward(x_c[vidx], obs_state)
            tokens = ad.stack([sample_feature(bundle, i, x_o)[0]
                               for i in range(bundle.num_views)], axis=1)
            f_geo = fuse(tokens, params, "geo", cfg)
            xt = ad.Tensor(np.ascontiguousarray(x_norm[vidx]), dtype=dtype)
            s = eval_density(xt, f_geo, params, cfg)
            out = np.zeros(sl.stop - sl.start)
            out[vidx] = s.data
            sigma[sl] = out
    occupancy = 1.0 - np.exp(-sigma * edge)
    return DensityGrid(resolution=(nx, ny, nz), box=box,
                       values=occupancy.reshape(nx, ny, nz))


def occupancy_grid_from_sigma(sigma_fn, box, resolution):
    """Grid from an analytic density function (test/bypass path)."""
    if np.isscalar(resolution):
        resolution = (int(resolution),) * 3
    axes = [box.lo[a] + (np.arange(resolution[a]) + 0.5) *
            ((box.hi[a] - box.lo[a]) / resolution[a]) for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.reshape(-1), gy.reshape(-1), gz.reshape(-1)], axis=1)
    sigma = np.asarray(sigma_fn(pts), dtype=np.float64)
    edge = float((box.hi[0] - box.lo[0]) / resolution[0])
    occ = 1.0 - np.exp(-sigma * edge)
    return DensityGrid(resolution=tuple(resolution), box=box,
                       values=occ.reshape(resolution))


def marching_cubes(grid, iso=0.5):
    """Triangulate the iso-surface; returns (vertices (n,3), faces (m,3)).

    Vertices are in world coordinates and shared across cell edges, so the
    surface is watertight wherever neighboring cells agree.  An empty result
    (no crossings) returns empty arrays.
    """
    vals = grid.values
    nx, ny, nz = vals.shape
    xs = grid.centers_axis(0)
    ys = grid.centers_axis(1)
    zs = grid.centers_axis(2)

    below = vals < iso
    # cell-corner masks for all (nx-1, ny-1, nz-1) cells
    idx = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int32)
    for bit, (ox, oy, oz) in enumerate(VERT_OFFSETS):
        idx |= (below[ox:nx - 1 + ox, oy:ny - 1 + oy, oz:nz - 1 + oz] << bit)
    active = np.argwhere((idx != 0) & (idx != 255))
    if len(active) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)

    verts = []
    vert_ids = {}
    faces = []
    edge_verts = np.asarray(EDGE_VERTS)
    offsets = np.asarray(VERT_OFFSETS)

    def corner_value(cx, cy, cz, corner):
        ox, oy, oz = offsets[corner]
        return vals[cx + ox, cy + oy, cz + oz]

    def corner_pos(cx, cy, cz, corner):
        ox, oy, oz = offsets[corner]
        return np.array([xs[cx + ox], ys[cy + oy], zs[cz + oz]])

    def edge_vertex(cx, cy, cz, edge):
        a, b = edge_verts[0, edge], edge_verts[1, edge]
        ka = (cx + offsets[a][0], cy + offsets[a][1], cz + offsets[a][2])
        kb = (cx + offsets[b][0], cy + offsets[b][1], cz + offsets[b][2])
        key = (ka, kb) if ka < kb else (kb, ka)
        vid = vert_ids.get(key)
        if vid is not None:
            return vid
        va = corner_value(cx, cy, cz, a)
        vb = corner_value(cx, cy, cz, b)
        denom = vb - va
        mu = 0.5 if abs(denom) < 1e-30 else np.clip((iso - va) / denom, 0.0, 1.0)
        pos = corner_pos(cx, cy, cz, a) * (1 - mu) + corner_pos(cx, cy, cz, b) * mu
        vid = len(verts)
        verts.append(pos)
        vert_ids[key] = vid
        return vid

    for cx, cy, cz in active:
        cube = int(idx[cx, cy, cz])
        if EDGE_TABLE[cube] == 0:
            continue
        row = TRI_TABLE[cube]
        for t in range(0, 16, 3):
            if row[t] < 0:
                break
            faces.append((edge_vertex(cx, cy, cz, row[t]),
                          edge_vertex(cx, cy, cz, row[t + 1]),
                          edge_vertex(cx, cy, cz, row[t + 2])))

    verts = np.asarray(verts)
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces):
        # drop exactly-degenerate triangles (repeated shared vertices)
        keep = ((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) &
                (faces[:, 0] != faces[:, 2]))
        faces = faces[keep]
    return verts, faces


def triangle_areas(verts, faces):
    a = verts[faces[:, 1]] - verts[faces[:, 0]]
    b = verts[faces[:, 2]] - verts[faces[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


def save_mesh(path, verts, faces):
    """Write OBJ (ascii) or PLY (binary little-endian) based on extension."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        with open(path, "w") as f:
            f.write("# skinfield extracted mesh\n")
            for v in verts:
                f.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
            for tri in faces:
                f.write(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")
    elif ext == ".ply":
        with open(path, "wb") as f:
            header = (
                "ply\nformat binary_little_endian 1.0\n"
                f"element vertex {len(verts)}\n"
                "property float x\nproperty float y\nproperty float z\n"
                f"element face {len(faces)}\n"
                "property list uchar int vertex_indices\nend_header\n")
            f.write(header.encode("ascii"))
            f.write(np.asarray(verts, dtype="<f4").tobytes())
            for tri in faces:
                f.write(struct.pack("<B3i", 3, int(tri[0]), int(tri[1]), int(tri[2])))
    else:
        raise ValueError(f"unsupported mesh format {ext!r} (use .obj or .ply)")


def load_obj(path):
    """Minimal OBJ reader (round-trip tests)."""
    verts, faces = [], []
    with open(path) as f:
        for line in f:
            if line.startswith("v "):
                verts.append([float(x) for x in line.split()[1:4]])
            elif line.startswith("f "):
                faces.append([int(tok.split("/")[0]) - 1 for tok in line.split()[1:4]])
    return np.asarray(verts), np.asarray(faces, dtype=np.int64)
