"""Scene dataset: directory format, synthetic generator, and validating loader.

Layout:
    scene.json                                  manifest ("skinfield-scene-v1")
    bodies/<subject>/body.json|body.bin
    poses/<subject>/<pose>.json
    images/<subject>/<pose>/view_<k>.png        8-bit RGB
    masks/<subject>/<pose>/view_<k>.png         8-bit gray, foreground >= 128

Ground truth comes from the z-buffer rasterizer, an independent rendering
path from the volumetric renderer under test.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .bodymodel import BodyParams, forward_kinematics, load_body, save_body
from .cameras import Camera, look_at
from .mannequin import build_mannequin, sample_pose
from .rasterizer import rasterize

SCENE_VERSION = "skinfield-scene-v1"


class SceneValidationError(Exception):
    pass


@dataclass
class ViewRecord:
    view_id: int
    camera: Camera
    image_path: str
    mask_path: str
    _image: np.ndarray = field(default=None, repr=False)
    _mask: np.ndarray = field(default=None, repr=False)

    def image(self):
        if self._image is None:
            self._image = np.asarray(Image.open(self.image_path).convert("RGB"),
                                     dtype=np.float64) / 255.0
        return self._image

    def mask(self):
        if self._mask is None:
            raw = np.asarray(Image.open(self.mask_path).convert("L"))
            self._mask = raw >= 128
        return self._mask


@dataclass
class PoseRecord:
    pose_id: str
    params: BodyParams
    views: list


@dataclass
class SubjectRecord:
    subject_id: str
    body: object
    poses: list


@dataclass
class SceneDataset:
    root: str
    subjects: list
    split: dict
    resolution: tuple

    def subject(self, subject_id):
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(f"unknown subject {subject_id!r}")

    @property
    def train_subjects(self):
        return [self.subject(s) for s in self.split["train"]]

    @property
    def test_subjects(self):
        return [self.subject(s) for s in self.split["test"]]


def _save_png(path, array):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    if array.ndim == 2:
        img = Image.fromarray((array * 255).astype(np.uint8), mode="L")
    else:
        img = Image.fromarray((np.clip(array, 0, 1) * 255 + 0.5).astype(np.uint8), mode="RGB")
    img.save(path)


def _ring_cameras(center, n_views, resolution, radius, rng_unused=None):
    """Cameras evenly spaced in azimuth over [0, 360) and elevation over
    [0, 35] degrees, all pointing at the body center."""
    w, h = resolution
    f = 0.95 * min(w, h)
    cams = []
    for k in range(n_views):
        azim = 2.0 * np.pi * k / n_views
        elev = np.deg2rad(35.0) * (k / (n_views - 1) if n_views > 1 else 0.0)
        eye = center + radius * np.array([
            np.sin(azim) * np.cos(elev),
            np.sin(elev),
            np.cos(azim) * np.cos(elev),
        ])
        rot, tr = look_at(eye, center)
        cams.append(Camera(fx=f, fy=f, cx=(w - 1) / 2, cy=(h - 1) / 2,
                           rotation=rot, translation=tr, width=w, height=h))
    return cams


def generate_mannequin_scene(root, subjects=1, poses=1, views=3,
                             resolution=(128, 128), seed=0):
    """Build a complete synthetic scene on disk and return the loaded dataset.

    The same seed reproduces the dataset bit-for-bit.
    """
    if min(subjects, poses, views) < 1:
        raise ValueError("subjects, poses, and views must all be >= 1")
    root = str(root)
    try:
        os.makedirs(root, exist_ok=True)
        probe = os.path.join(root, ".write_probe")
        with open(probe, "w") as f:
            f.write("ok")
        os.remove(probe)
    except OSError as e:
        raise SceneValidationError(f"scene root {root!r} is not writable: {e}") from e

    w, h = resolution
    manifest = {"version": SCENE_VERSION, "resolution": [w, h],
                "seed": seed, "subjects": []}

    for si in range(subjects):
        sid = f"subject_{si:03d}"
        srng = np.random.default_rng([seed, si])
        body = build_mannequin(seed=int(srng.integers(0, 2 ** 31)))
        save_body(os.path.join(root, "bodies", sid), body)
        height = body.vertices[:, 1].max() - body.vertices[:, 1].min()
        radius = 2.35 * max(height / 1.75, 0.7)

        subj_entry = {"id": sid, "body": f"bodies/{sid}/body.json", "poses": []}
        for pi in range(poses):
            pid = f"pose_{pi:03d}"
            prng = np.random.default_rng([seed, si, pi, 7])
            params = sample_pose(prng, num_joints=body.num_joints)
            pose_path = os.path.join(root, "poses", sid, f"{pid}.json")
            os.makedirs(os.path.dirname(pose_path), exist_ok=True)
            with open(pose_path, "w") as f:
                json.dump(params.to_json(), f)

            state = forward_kinematics(body, params)
            center = state.bounding_box(0.0).center
            cams = _ring_cameras(center, views, (w, h), radius)

            pose_entry = {"id": pid, "params": f"poses/{sid}/{pid}.json", "views": []}
            for vi, cam in enumerate(cams):
                image, mask, _ = rasterize(cam, state.posed_vertices, body.faces,
                                           body.face_colors)
                img_rel = f"images/{sid}/{pid}/view_{vi:03d}.png"
                msk_rel = f"masks/{sid}/{pid}/view_{vi:03d}.png"
                _save_png(os.path.join(root, img_rel), image)
                _save_png(os.path.join(root, msk_rel), mask.astype(np.float64))
                pose_entry["views"].append({
                    "id": vi, "image": img_rel, "mask": msk_rel,
                    "camera": cam.to_json(),
                })
            subj_entry["poses"].append(pose_entry)
        manifest["subjects"].append(subj_entry)

    sids = [s["id"] for s in manifest["subjects"]]
    n_test = 0 if subjects == 1 else max(1, subjects // 5)
    manifest["split"] = {"train": sids[:len(sids) - n_test],
                         "test": sids[len(sids) - n_test:]}
    with open(os.path.join(root, "scene.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    return load_scene(root)


def load_scene(root, validate_images=True):
    """Load and eagerly validate a scene directory."""
    root = str(root)
    manifest_path = os.path.join(root, "scene.json")
    if not os.path.exists(manifest_path):
        raise SceneValidationError(f"missing manifest {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("version") != SCENE_VERSION:
        raise SceneValidationError(
            f"unsupported scene version {manifest.get('version')!r}")
    resolution = tuple(manifest["resolution"])

    split = manifest.get("split", {"train": [], "test": []})
    overlap = set(split.get("train", [])) & set(split.get("test", []))
    if overlap:
        raise SceneValidationError(
            f"train/test subject sets overlap: {sorted(overlap)}")

    subjects = []
    for s in manifest["subjects"]:
        body_path = os.path.join(root, s["body"])
        if not os.path.exists(body_path):
            raise SceneValidationError(f"subject {s['id']}: missing body file {s['body']}")
        body = load_body(body_path)   # runs the body invariant checks
        poses = []
        for p in s["poses"]:
            pose_path = os.path.join(root, p["params"])
            if not os.path.exists(pose_path):
                raise SceneValidationError(
                    f"subject {s['id']} pose {p['id']}: missing pose file {p['params']}")
            with open(pose_path) as f:
                params = BodyParams.from_json(json.load(f))
            if len(params.pose) != body.num_joints:
                raise SceneValidationError(
                    f"subject {s['id']} pose {p['id']}: {len(params.pose)} joint "
                    f"rotations for a {body.num_joints}-joint body")
            views = []
            for v in p["views"]:
                cam = Camera.from_json(v["camera"])
                img_path = os.path.join(root, v["image"])
                msk_path = os.path.join(root, v["mask"])
                for path, kind in ((img_path, "image"), (msk_path, "mask")):
                    if not os.path.exists(path):
                        raise SceneValidationError(
                            f"subject {s['id']} pose {p['id']} view {v['id']}: "
                            f"missing {kind} file {path}")
                if (cam.width, cam.height) != resolution:
                    raise SceneValidationError(
                        f"subject {s['id']} pose {p['id']} view {v['id']}: camera "
                        f"resolution {(cam.width, cam.height)} != scene {resolution}")
                if validate_images:
                    for path, kind in ((img_path, "image"), (msk_path, "mask")):
                        with Image.open(path) as im:
                            if im.size != resolution:
                                raise SceneValidationError(
                                    f"subject {s['id']} pose {p['id']} view {v['id']}: "
                                    f"{kind} resolution {im.size} != scene {resolution}")
                views.append(ViewRecord(view_id=int(v["id"]), camera=cam,
                                        image_path=img_path, mask_path=msk_path))
            poses.append(PoseRecord(pose_id=p["id"], params=params, views=views))
        subjects.append(SubjectRecord(subject_id=s["id"], body=body, poses=poses))
    return SceneDataset(root=root, subjects=subjects, split=split,
                        resolution=resolution)
