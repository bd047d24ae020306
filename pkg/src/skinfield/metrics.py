"""Masked image metrics: PSNR and SSIM inside the projected body box.

The evaluation protocol projects the posed body's 3D bounding box into the
image, rasterizes the convex hull of the 8 projected corners, and scores only
pixels inside that hull.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .cameras import BehindCameraError, project_batch

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class MetricError(Exception):
    pass


def _convex_hull_2d(points):
    """Monotone-chain hull; returns hull vertices in counter-clockwise order."""
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.asarray(pts, dtype=np.float64)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1], dtype=np.float64)


def bbox_mask(cam, state, margin=0.05):
    """Binary (h, w) mask of pixels inside the projected posed-body box."""
    corners = state.bounding_box(margin).corners
    uv, in_front = project_batch(cam, corners)
    if not in_front.any():
        raise BehindCameraError("posed bounding box is entirely behind the camera")
    hull = _convex_hull_2d(uv[in_front])
    xs, ys = np.meshgrid(np.arange(cam.width, dtype=np.float64),
                         np.arange(cam.height, dtype=np.float64))
    if len(hull) < 3:
        return np.zeros((cam.height, cam.width), dtype=bool)
    inside = np.ones((cam.height, cam.width), dtype=bool)
    n = len(hull)
    for i in range(n):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % n]
        # hull is CCW; interior is the non-negative side of each edge
        inside &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= 0
    return inside


def masked_psnr(pred, gt, mask):
    """10 log10(1 / MSE) over masked pixels of [0, 1] images, capped at 99 dB."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricError(f"image shapes differ: {pred.shape} vs {gt.shape}")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MetricError("empty evaluation mask")
    diff = (pred - gt) ** 2
    if diff.ndim == 3:
        mse = float(diff[mask].mean())
    else:
        mse = float(diff[mask].mean())
    if mse <= 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def _gaussian_kernel(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    ax = np.arange(size) - half
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_map(pred, gt, kernel):
    mu_p = ndimage.correlate(pred, kernel, mode="constant")
    mu_g = ndimage.correlate(gt, kernel, mode="constant")
    mu_pp = ndimage.correlate(pred * pred, kernel, mode="constant")
    mu_gg = ndimage.correlate(gt * gt, kernel, mode="constant")
    mu_pg = ndimage.correlate(pred * gt, kernel, mode="constant")
    var_p = mu_pp - mu_p ** 2
    var_g = mu_gg - mu_g ** 2
    cov = mu_pg - mu_p * mu_g
    num = (2 * mu_p * mu_g + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_p ** 2 + mu_g ** 2 + SSIM_C1) * (var_p + var_g + SSIM_C2)
    return num / den


def masked_ssim(pred, gt, mask):
    """SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over masked
    window centers whose full window fits inside the image; RGB inputs are
    averaged over channels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricError(f"image shapes differ: {pred.shape} vs {gt.shape}")
    mask = np.asarray(mask, dtype=bool)
    half = SSIM_WINDOW // 2
    interior = np.zeros_like(mask)
    interior[half:-half or None, half:-half or None] = True
    centers = mask & interior
    if not centers.any():
        raise MetricError("empty evaluation mask (after window-interior restriction)")
    kernel = _gaussian_kernel()
    if pred.ndim == 2:
        pred = pred[:, :, None]
        gt = gt[:, :, None]
    vals = [float(_ssim_map(pred[:, :, c], gt[:, :, c], kernel)[centers].mean())
            for c in range(pred.shape[2])]
    return float(np.mean(vals))


def silhouette_iou(pred_mask, gt_mask):
    """Intersection-over-union of two binary masks."""
    pred_mask = np.asarray(pred_mask, dtype=bool)
    gt_mask = np.asarray(gt_mask, dtype=bool)
    union = (pred_mask | gt_mask).sum()
    if union == 0:
        return 1.0
    return float((pred_mask & gt_mask).sum() / union)
