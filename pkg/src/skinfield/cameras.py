"""Pinhole camera model, ray generation, and ray/box intersection.

Conventions (fixed throughout the project):
  * right-handed world coordinates; camera space has +x right, +y down,
    +z forward (the camera looks down +z);
  * pixel (0, 0) is the *center* of the top-left pixel; a WxH image spans
    continuous pixel coordinates [-0.5, W-0.5] x [-0.5, H-0.5].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class BehindCameraError(Exception):
    """Point projected at or behind the camera plane."""


class OutOfImageError(Exception):
    """Pixel coordinate outside the image bounds."""


_Z_EPS = 1e-6


@dataclass
class Camera:
    """Intrinsics + world-to-camera rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray      # (3, 3) world -> camera
    translation: np.ndarray   # (3,)
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        rtr = self.rotation.T @ self.rotation
        if not np.allclose(rtr, np.eye(3), atol=1e-6) or np.linalg.det(self.rotation) < 0:
            raise ValueError("camera rotation must be orthonormal with det +1")

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_json(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_json(cls, d):
        return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                   rotation=np.asarray(d["rotation"]), translation=np.asarray(d["translation"]),
                   width=int(d["width"]), height=int(d["height"]))


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray     # unit length
    t_near: float = 0.0
    t_far: float = np.inf

    def point_at(self, t):
        return self.origin + t * self.direction


@dataclass
class Aabb:
    """Axis-aligned box."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)

    def dilated(self, margin):
        return Aabb(self.lo - margin, self.hi + margin)

    def contains(self, pts, atol=0.0):
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lo - atol) & (pts <= self.hi + atol), axis=1)

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def corners(self):
        lo, hi = self.lo, self.hi
        return np.array([[x, y, z] for x in (lo[0], hi[0])
                         for y in (lo[1], hi[1])
                         for z in (lo[2], hi[2])])


def project(cam, x_world):
    """3D world point -> 2D pixel coordinates.

    Raises BehindCameraError when the point is at or behind the camera plane.
    """
    xc = cam.rotation @ np.asarray(x_world, dtype=np.float64) + cam.translation
    if xc[2] <= _Z_EPS:
        raise BehindCameraError(f"point {x_world} has camera-space z={xc[2]:.3g}")
    return np.array([cam.fx * xc[0] / xc[2] + cam.cx,
                     cam.fy * xc[1] / xc[2] + cam.cy])


def project_batch(cam, pts):
    """Vectorized projection; returns (uv (n,2), in_front (n,) bool).

    Behind-camera points get uv set to (-1, -1) rather than raising.
    """
    pts = np.asarray(pts, dtype=np.float64)
    xc = pts @ cam.rotation.T + cam.translation
    z = xc[:, 2]
    in_front = z > _Z_EPS
    zs = np.where(in_front, z, 1.0)
    uv = np.empty((len(pts), 2))
    uv[:, 0] = cam.fx * xc[:, 0] / zs + cam.cx
    uv[:, 1] = cam.fy * xc[:, 1] / zs + cam.cy
    uv[~in_front] = -1.0
    return uv, in_front


def pixel_ray(cam, px):
    """World-space ray through the center of a (possibly fractional) pixel."""
    u, v = float(px[0]), float(px[1])
    if not (-0.5 <= u <= cam.width - 0.5 and -0.5 <= v <= cam.height - 0.5):
        raise OutOfImageError(
            f"pixel ({u}, {v}) outside image bounds {cam.width}x{cam.height}")
    d_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    d_world = cam.rotation.T @ d_cam
    d_world /= np.linalg.norm(d_world)
    return Ray(origin=cam.center, direction=d_world)


def pixel_rays(cam, pixels):
    """Batched version: pixels (n, 2) -> (origins (n, 3), directions (n, 3))."""
    pixels = np.asarray(pixels, dtype=np.float64)
    d_cam = np.stack([(pixels[:, 0] - cam.cx) / cam.fx,
                      (pixels[:, 1] - cam.cy) / cam.fy,
                      np.ones(len(pixels))], axis=1)
    d_world = d_cam @ cam.rotation
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.center, d_world.shape).copy()
    return origins, d_world


def ray_box_intersect(ray_o, ray_d, box):
    """Slab test clipped to t >= 0; returns (t_near, t_far) or None on a miss.

    Accepts a single ray as two 3-vectors.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.asarray(ray_d, dtype=np.float64)
    o = np.asarray(ray_o, dtype=np.float64)
    t1 = (box.lo - o) * inv
    t2 = (box.hi - o) * inv
    # Parallel-axis rays: components become +-inf; nan (origin on a slab
    # boundary with parallel direction) means that slab never constrains.
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
    t_near = max(tmin.max(), 0.0)
    t_far = tmax.min()
    if t_far < t_near:
        return None
    return (float(t_near), float(t_far))


def ray_box_intersect_batch(origins, dirs, box):
    """Vectorized slab test; returns (t_near (n,), t_far (n,), hit (n,) bool)."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (box.lo[None, :] - origins) * inv
        t2 = (box.hi[None, :] - origins) * inv
    nanmask = np.isnan(t1) | np.isnan(t2)
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    tmin[nanmask] = -np.inf
    tmax[nanmask] = np.inf
    t_near = np.maximum(tmin.max(axis=1), 0.0)
    t_far = tmax.min(axis=1)
    hit = t_far >= t_near
    return t_near, t_far, hit


def look_at(eye, target, up=(0.0, 1.0, 0.0)):
    """World-to-camera rotation/translation with +z toward `target`.

    +y in camera space points image-down, so the returned extrinsics pair
    with the top-left pixel convention.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        # forward parallel to up; fall back to a different up hint
        up = np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, up)
        nr = np.linalg.norm(right)
    right /= nr
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=0)
    translation = -rotation @ eye
    return rotation, translation
