"""Masked PSNR/SSIM and the projected-box evaluation mask."""

import numpy as np
import pytest

from skinfield.bodymodel import BodyParams, RiggedBodyModel, forward_kinematics
from skinfield.cameras import BehindCameraError, Camera, look_at
from skinfield.metrics import (MetricError, bbox_mask, masked_psnr,
                               masked_ssim, silhouette_iou)


def cube_state(center=(0.0, 0.0, 2.0), half=0.5):
    c = np.asarray(center, dtype=float)
    corners = np.array([[x, y, z] for x in (-half, half) for y in (-half, half)
                        for z in (-half, half)]) + c
    model = RiggedBodyModel(vertices=corners, faces=np.zeros((1, 3), dtype=int),
                            joints=np.zeros((1, 3)), parents=np.array([-1]),
                            weights=np.ones((8, 1)),
                            vertex_normals=np.tile([1.0, 0, 0], (8, 1)))
    return forward_kinematics(model, BodyParams.rest(1))


def front_camera(res=64, f=None):
    return Camera(fx=f or res, fy=f or res, cx=(res - 1) / 2, cy=(res - 1) / 2,
                  rotation=np.eye(3), translation=np.zeros(3), width=res, height=res)


def test_bbox_mask_fills_frame_for_huge_box():
    cam = front_camera(32)
    state = cube_state(center=(0, 0, 1.0), half=3.0)
    mask = bbox_mask(cam, state, margin=0.0)
    assert mask.all()


def test_bbox_mask_matches_square_area():
    # an axis-aligned cube facing the camera projects to a square whose front
    # face dominates: side = f * (2*half) / (z - half)
    cam = front_camera(128, f=100.0)
    half, z = 0.25, 2.0
    state = cube_state(center=(0, 0, z), half=half)
    mask = bbox_mask(cam, state, margin=0.0)
    side_px = 100.0 * (2 * half) / (z - half)
    expected_area = side_px ** 2
    assert abs(mask.sum() - expected_area) <= 4 * side_px + 4


def test_bbox_mask_behind_camera_errors():
    cam = front_camera(32)
    state = cube_state(center=(0, 0, -3.0), half=0.4)
    with pytest.raises(BehindCameraError):
        bbox_mask(cam, state, margin=0.0)


def test_psnr_identical_is_capped():
    img = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
    mask = np.ones((16, 16), dtype=bool)
    assert masked_psnr(img, img, mask) == 99.0


def test_psnr_known_mse():
    gt = np.zeros((10, 10))
    pred = np.full((10, 10), 0.1)   # MSE = 0.01 -> 20 dB
    mask = np.ones((10, 10), dtype=bool)
    assert masked_psnr(pred, gt, mask) == pytest.approx(20.0, abs=1e-9)


def test_psnr_matches_scalar_loop_oracle():
    rng = np.random.default_rng(3)
    pred = rng.uniform(0, 1, (12, 14, 3))
    gt = rng.uniform(0, 1, (12, 14, 3))
    mask = rng.random((12, 14)) < 0.6
    got = masked_psnr(pred, gt, mask)
    total, count = 0.0, 0
    for y in range(12):
        for x in range(14):
            if mask[y, x]:
                for c in range(3):
                    total += (pred[y, x, c] - gt[y, x, c]) ** 2
                    count += 1
    expected = 10.0 * np.log10(1.0 / (total / count))
    assert abs(got - expected) <= 1e-6


def test_psnr_empty_mask_errors():
    with pytest.raises(MetricError):
        masked_psnr(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4), dtype=bool))


def test_ssim_identical_is_one():
    img = np.random.default_rng(1).uniform(0, 1, (32, 32, 3))
    mask = np.ones((32, 32), dtype=bool)
    assert masked_ssim(img, img, mask) == pytest.approx(1.0, abs=1e-12)


def test_ssim_negative_for_anticorrelated():
    rng = np.random.default_rng(2)
    img = 0.5 + 0.4 * np.sin(np.linspace(0, 20, 32 * 32)).reshape(32, 32)
    neg = 1.0 - img
    mask = np.ones((32, 32), dtype=bool)
    assert masked_ssim(img, neg, mask) < 0


def test_ssim_constant_images_closed_form():
    # constant images: variances vanish; SSIM = (2 mu_p mu_g + C1)/(mu_p^2 + mu_g^2 + C1)
    mu_p, mu_g = 0.3, 0.5
    pred = np.full((24, 24), mu_p)
    gt = np.full((24, 24), mu_g)
    mask = np.ones((24, 24), dtype=bool)
    expected = (2 * mu_p * mu_g + 0.01 ** 2) / (mu_p ** 2 + mu_g ** 2 + 0.01 ** 2)
    assert masked_ssim(pred, gt, mask) == pytest.approx(expected, abs=1e-9)


def test_ssim_matches_scalar_loop_oracle():
    # naive per-window double loop on a small image
    rng = np.random.default_rng(5)
    pred = rng.uniform(0, 1, (18, 18))
    gt = np.clip(pred + rng.normal(0, 0.1, (18, 18)), 0, 1)
    mask = np.ones((18, 18), dtype=bool)
    got = masked_ssim(pred, gt, mask)

    half = 5
    ax = np.arange(11) - 5.0
    g = np.exp(-(ax ** 2) / (2 * 1.5 ** 2))
    k = np.outer(g, g)
    k /= k.sum()
    vals = []
    for cy in range(half, 18 - half):
        for cx in range(half, 18 - half):
            wp = pred[cy - half:cy + half + 1, cx - half:cx + half + 1]
            wg = gt[cy - half:cy + half + 1, cx - half:cx + half + 1]
            mu_p = (wp * k).sum()
            mu_g = (wg * k).sum()
            var_p = (wp * wp * k).sum() - mu_p ** 2
            var_g = (wg * wg * k).sum() - mu_g ** 2
            cov = (wp * wg * k).sum() - mu_p * mu_g
            c1, c2 = 0.01 ** 2, 0.03 ** 2
            vals.append(((2 * mu_p * mu_g + c1) * (2 * cov + c2)) /
                        ((mu_p ** 2 + mu_g ** 2 + c1) * (var_p + var_g + c2)))
    assert abs(got - np.mean(vals)) <= 1e-6


def test_metrics_symmetric():
    rng = np.random.default_rng(7)
    a = rng.uniform(0, 1, (20, 20, 3))
    b = rng.uniform(0, 1, (20, 20, 3))
    mask = np.ones((20, 20), dtype=bool)
    assert masked_psnr(a, b, mask) == masked_psnr(b, a, mask)
    assert masked_ssim(a, b, mask) == pytest.approx(masked_ssim(b, a, mask), abs=1e-12)


def test_mask_enlargement_with_matching_background():
    # prediction differs from gt only inside a small region; enlarging the
    # mask to the full frame (background matches) cannot lower the error
    rng = np.random.default_rng(9)
    gt = rng.uniform(0, 1, (32, 32, 3))
    pred = gt.copy()
    pred[10:20, 10:20] += 0.2
    small = np.zeros((32, 32), dtype=bool)
    small[8:22, 8:22] = True
    psnr_small = masked_psnr(pred, gt, small)
    psnr_full = masked_psnr(pred, gt, np.ones((32, 32), dtype=bool))
    assert psnr_full >= psnr_small


def test_silhouette_iou():
    a = np.zeros((10, 10), dtype=bool)
    b = np.zeros((10, 10), dtype=bool)
    a[2:6, 2:6] = True
    b[4:8, 4:8] = True
    inter = 2 * 2
    union = 16 + 16 - inter
    assert silhouette_iou(a, b) == pytest.approx(inter / union)
    assert silhouette_iou(a, a) == 1.0
