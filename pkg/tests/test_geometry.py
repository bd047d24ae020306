"""Density grid evaluation, marching cubes, and mesh export."""

import numpy as np
import pytest

from skinfield.cameras import Aabb
from skinfield.geometry import (DensityGrid, load_obj, marching_cubes,
                                occupancy_grid_from_sigma, save_mesh,
                                triangle_areas)


def sphere_sigma(radius=0.5, inside=200.0):
    def fn(pts):
        r = np.linalg.norm(pts, axis=1)
        return np.where(r <= radius, inside, 0.0)
    return fn


BOX2M = Aabb([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0])


def test_all_below_iso_gives_empty_mesh():
    grid = DensityGrid(resolution=(8, 8, 8), box=BOX2M, values=np.zeros((8, 8, 8)))
    verts, faces = marching_cubes(grid, iso=0.5)
    assert len(verts) == 0 and len(faces) == 0


def test_analytic_ball_grid_occupancy():
    grid = occupancy_grid_from_sigma(sphere_sigma(), BOX2M, 32)
    centers = grid.centers_axis(0)
    # voxel centers well inside the ball are nearly opaque; outside exactly 0
    mid = 16
    assert grid.values[mid, mid, mid] > 0.99
    assert grid.values[0, 0, 0] == 0.0


def test_sphere_radius_within_one_voxel_at_64():
    grid = occupancy_grid_from_sigma(sphere_sigma(0.5), BOX2M, 64)
    verts, faces = marching_cubes(grid, iso=0.5)
    assert len(faces) > 100
    radii = np.linalg.norm(verts, axis=1)
    voxel = 2.0 / 64
    assert abs(radii.mean() - 0.5) <= voxel
    assert np.abs(radii - 0.5).max() <= 2 * voxel


def test_no_degenerate_triangles():
    grid = occupancy_grid_from_sigma(sphere_sigma(0.4), BOX2M, 24)
    verts, faces = marching_cubes(grid, iso=0.5)
    areas = triangle_areas(verts, faces)
    assert (areas > 1e-12).all()


def test_isosurface_vertices_lie_on_straddling_edges():
    grid = occupancy_grid_from_sigma(sphere_sigma(0.45), BOX2M, 20)
    verts, faces = marching_cubes(grid, iso=0.5)
    centers = [grid.centers_axis(a) for a in range(3)]
    vals = grid.values
    edge = grid.voxel_edge
    for v in verts[:200]:
        # each vertex sits on a grid edge: two coords on center lines, one between
        on_axis = [np.min(np.abs(centers[a] - v[a])) < 1e-9 for a in range(3)]
        assert sum(on_axis) >= 2
        free = on_axis.index(False) if False in on_axis else 0
        # endpoints of that edge straddle the iso level
        ia = [int(np.argmin(np.abs(centers[a] - v[a]))) for a in range(3)]
        lo = ia.copy()
        lo[free] = int(np.floor((v[free] - centers[free][0]) / edge))
        hi = lo.copy()
        hi[free] += 1
        if hi[free] >= vals.shape[free]:
            continue
        va = vals[tuple(lo)]
        vb = vals[tuple(hi)]
        assert (va - 0.5) * (vb - 0.5) <= 0


def test_resolution_convergence_of_enclosed_volume():
    def volume_of(res):
        grid = occupancy_grid_from_sigma(sphere_sigma(0.5), BOX2M, res)
        verts, faces = marching_cubes(grid, iso=0.5)
        # signed volume sum over triangles
        a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
        return abs(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    v64 = volume_of(64)
    v128 = volume_of(128)
    assert abs(v64 - v128) / v128 <= 0.05
    assert abs(v128 - 4.0 / 3.0 * np.pi * 0.5 ** 3) / v128 <= 0.05


def test_mesh_io_roundtrip(tmp_path):
    grid = occupancy_grid_from_sigma(sphere_sigma(0.4), BOX2M, 16)
    verts, faces = marching_cubes(grid, iso=0.5)
    obj = tmp_path / "m.obj"
    save_mesh(str(obj), verts, faces)
    v2, f2 = load_obj(str(obj))
    assert np.allclose(v2, verts, atol=1e-5)
    assert np.array_equal(f2, faces)

    ply = tmp_path / "m.ply"
    save_mesh(str(ply), verts, faces)
    raw = ply.read_bytes()
    assert raw.startswith(b"ply\nformat binary_little_endian")
    assert f"element vertex {len(verts)}".encode() in raw

    with pytest.raises(ValueError):
        save_mesh(str(tmp_path / "m.stl"), verts, faces)
