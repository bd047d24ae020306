"""Z-buffer triangle rasterizer: the independent ground-truth image oracle.

Deliberately a different rendering path from the volumetric renderer (flat
per-face albedo, exact coverage mask) so training supervision never depends on
the system under test.
"""

from __future__ import annotations

import numpy as np

from .cameras import project_batch


def rasterize(cam, vertices, faces, face_colors, background=(0.0, 0.0, 0.0)):
    """Render (image (h, w, 3) float, mask (h, w) bool, depth (h, w) float).

    Pixels are covered when their center lies inside a projected triangle;
    the mask is exactly the covered set.
    """
    h, w = cam.height, cam.width
    image = np.empty((h, w, 3), dtype=np.float64)
    image[:] = np.asarray(background, dtype=np.float64)
    zbuf = np.full((h, w), np.inf)
    covered = np.zeros((h, w), dtype=bool)

    uv, in_front = project_batch(cam, vertices)
    cam_z = (vertices @ cam.rotation.T + cam.translation)[:, 2]

    tri_ok = in_front[faces].all(axis=1)
    for fi in np.flatnonzero(tri_ok):
        i0, i1, i2 = faces[fi]
        p0, p1, p2 = uv[i0], uv[i1], uv[i2]
        xmin = max(int(np.ceil(min(p0[0], p1[0], p2[0]))), 0)
        xmax = min(int(np.floor(max(p0[0], p1[0], p2[0]))), w - 1)
        ymin = max(int(np.ceil(min(p0[1], p1[1], p2[1]))), 0)
        ymax = min(int(np.floor(max(p0[1], p1[1], p2[1]))), h - 1)
        if xmin > xmax or ymin > ymax:
            continue
        xs, ys = np.meshgrid(np.arange(xmin, xmax + 1), np.arange(ymin, ymax + 1))
        d = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
        if abs(d) < 1e-12:
            continue
        wa = ((p1[0] - xs) * (p2[1] - ys) - (p2[0] - xs) * (p1[1] - ys)) / d
        wb = ((p2[0] - xs) * (p0[1] - ys) - (p0[0] - xs) * (p2[1] - ys)) / d
        wc = 1.0 - wa - wb
        inside = (wa >= 0) & (wb >= 0) & (wc >= 0)
        if not inside.any():
            continue
        # perspective-correct depth via interpolated 1/z
        inv_z = wa / cam_z[i0] + wb / cam_z[i1] + wc / cam_z[i2]
        depth = 1.0 / np.maximum(inv_z, 1e-12)
        yy = ys[inside]
        xx = xs[inside]
        dd = depth[inside]
        closer = dd < zbuf[yy, xx]
        yy, xx, dd = yy[closer], xx[closer], dd[closer]
        zbuf[yy, xx] = dd
        image[yy, xx] = face_colors[fi]
        covered[yy, xx] = True

    depth_out = np.where(covered, zbuf, 0.0)
    return image, covered, depth_out
