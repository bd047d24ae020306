"""Rigged parametric body: canonical mesh, joint tree, skinning weights, FK.

The body file format is JSON + a little-endian binary sidecar; any rigged
model matching it can be loaded (the bundled mannequin generator emits one
with an SMPL-shaped 24-joint hierarchy).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cameras import Aabb

BODY_VERSION = "skinfield-body-v1"

WEIGHT_SUM_TOL = 1e-5
NORMAL_TOL = 1e-5


class BodyValidationError(Exception):
    pass


class SkeletonError(Exception):
    """Joint hierarchy is not a tree rooted at joint 0."""


def _validate_tree(parents):
    parents = np.asarray(parents, dtype=np.int64)
    j = len(parents)
    if j == 0 or parents[0] != -1:
        raise SkeletonError("joint 0 must be the root (parent -1)")
    for i in range(1, j):
        if not (0 <= parents[i] < i):
            # parents must precede children; this also rules out cycles
            raise SkeletonError(
                f"joint {i} has parent {parents[i]}; parents must be earlier joints")
    return parents


@dataclass
class RiggedBodyModel:
    """Canonical-pose mesh with per-vertex skinning weights."""

    vertices: np.ndarray        # (V, 3) meters, canonical pose
    faces: np.ndarray           # (F, 3) int
    joints: np.ndarray          # (J, 3) rest positions
    parents: np.ndarray         # (J,) parent indices, root = -1
    weights: np.ndarray         # (V, J) rows sum to 1
    vertex_normals: np.ndarray  # (V, 3) unit
    shape_dirs: np.ndarray | None = None    # (S, V, 3) linear blend offsets
    face_colors: np.ndarray | None = None   # (F, 3) albedo in [0, 1]
    _canonical_tree: cKDTree | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.joints = np.asarray(self.joints, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.vertex_normals = np.asarray(self.vertex_normals, dtype=np.float64)
        self.parents = _validate_tree(self.parents)
        self.validate()

    def validate(self):
        v, j = self.weights.shape
        if v != len(self.vertices):
            raise BodyValidationError(
                f"weights rows ({v}) != vertex count ({len(self.vertices)})")
        if j != len(self.joints):
            raise BodyValidationError(
                f"weights cols ({j}) != joint count ({len(self.joints)})")
        if (self.weights < -1e-9).any():
            bad = int(np.argwhere(self.weights < -1e-9)[0][0])
            raise BodyValidationError(f"negative skinning weight at vertex {bad}")
        sums = self.weights.sum(axis=1)
        off = np.abs(sums - 1.0) > WEIGHT_SUM_TOL
        if off.any():
            bad = int(np.argmax(off))
            raise BodyValidationError(
                f"skinning weights of vertex {bad} sum to {sums[bad]:.6f}, expected 1")
        norms = np.linalg.norm(self.vertex_normals, axis=1)
        offn = np.abs(norms - 1.0) > NORMAL_TOL
        if offn.any():
            bad = int(np.argmax(offn))
            raise BodyValidationError(
                f"vertex normal {bad} has length {norms[bad]:.6f}, expected 1")

    @property
    def num_joints(self):
        return len(self.joints)

    @property
    def canonical_tree(self):
        if self._canonical_tree is None:
            self._canonical_tree = cKDTree(self.vertices)
        return self._canonical_tree

    def canonical_aabb(self, margin=0.0):
        return Aabb(self.vertices.min(axis=0) - margin,
                    self.vertices.max(axis=0) + margin)

    def shaped_vertices(self, shape_coeffs):
        """Canonical vertices plus linear shape-blend offsets."""
        if shape_coeffs is None or self.shape_dirs is None:
            return self.vertices
        coeffs = np.asarray(shape_coeffs, dtype=np.float64)
        n = min(len(coeffs), len(self.shape_dirs))
        return self.vertices + np.tensordot(coeffs[:n], self.shape_dirs[:n], axes=1)


@dataclass
class BodyParams:
    """One pose: per-joint axis-angle rotations + root translation."""

    pose: np.ndarray                 # (J, 3) axis-angle, radians
    translation: np.ndarray          # (3,) meters
    shape: np.ndarray | None = None  # optional shape coefficients

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.shape is not None:
            self.shape = np.asarray(self.shape, dtype=np.float64)
        if not np.isfinite(self.pose).all():
            raise BodyValidationError("pose contains non-finite rotations")

    @classmethod
    def rest(cls, num_joints):
        return cls(pose=np.zeros((num_joints, 3)), translation=np.zeros(3))

    def to_json(self):
        d = {"rotations": self.pose.tolist(), "translation": self.translation.tolist()}
        if self.shape is not None:
            d["shape"] = self.shape.tolist()
        return d

    @classmethod
    def from_json(cls, d):
        return cls(pose=np.asarray(d["rotations"]),
                   translation=np.asarray(d["translation"]),
                   shape=np.asarray(d["shape"]) if d.get("shape") is not None else None)


@dataclass
class PoseState:
    """Per-joint rigid transforms plus the posed mesh and its spatial index."""

    model: RiggedBodyModel
    transforms: np.ndarray        # (J, 4, 4), canonical -> posed
    posed_vertices: np.ndarray    # (V, 3)
    posed_joints: np.ndarray      # (J, 3)
    spatial_index: cKDTree = field(repr=False, default=None)

    def __post_init__(self):
        if self.spatial_index is None:
            self.spatial_index = cKDTree(self.posed_vertices)

    def bounding_box(self, margin=0.0):
        if margin < 0:
            raise ValueError("bounding box margin must be >= 0")
        return Aabb(self.posed_vertices.min(axis=0) - margin,
                    self.posed_vertices.max(axis=0) + margin)


def rodrigues(axis_angle):
    """Axis-angle vectors (n, 3) -> rotation matrices (n, 3, 3)."""
    aa = np.atleast_2d(np.asarray(axis_angle, dtype=np.float64))
    theta = np.linalg.norm(aa, axis=1, keepdims=True)
    small = theta[:, 0] < 1e-12
    axis = np.where(theta > 1e-12, aa / np.maximum(theta, 1e-12), 0.0)
    c = np.cos(theta)[:, :, None]
    s = np.sin(theta)[:, :, None]
    n = len(aa)
    k = np.zeros((n, 3, 3))
    k[:, 0, 1] = -axis[:, 2]
    k[:, 0, 2] = axis[:, 1]
    k[:, 1, 0] = axis[:, 2]
    k[:, 1, 2] = -axis[:, 0]
    k[:, 2, 0] = -axis[:, 1]
    k[:, 2, 1] = axis[:, 0]
    eye = np.broadcast_to(np.eye(3), (n, 3, 3))
    rot = eye + s * k + (1.0 - c) * np.einsum("nij,njk->nik", k, k)
    rot[small] = np.eye(3)
    return rot


def _rigid(rot, trans):
    out = np.eye(4)
    out[:3, :3] = rot
    out[:3, 3] = trans
    return out


def forward_kinematics(model, params):
    """Standard skeletal FK: local joint rotations chained down the tree.

    Returns a PoseState whose transforms map canonical space to posed space;
    the posed mesh is the LBS image of the canonical mesh.
    """
    j = model.num_joints
    if params.pose.shape != (j, 3):
        raise BodyValidationError(
            f"pose has shape {params.pose.shape}, expected ({j}, 3)")
    rots = rodrigues(params.pose)
    joints = model.joints

    globals_posed = np.zeros((j, 4, 4))
    globals_canon = np.zeros((j, 4, 4))
    for i in range(j):
        p = model.parents[i]
        if p < 0:
            local_p = _rigid(rots[i], joints[i] + params.translation)
            local_c = _rigid(np.eye(3), joints[i])
            globals_posed[i] = local_p
            globals_canon[i] = local_c
        else:
            offset = joints[i] - joints[p]
            globals_posed[i] = globals_posed[p] @ _rigid(rots[i], offset)
            globals_canon[i] = globals_canon[p] @ _rigid(np.eye(3), offset)

    # T_j maps canonical-space points rigidly attached to joint j into the
    # posed space.
    transforms = np.einsum("jab,jbc->jac", globals_posed, np.linalg.inv(globals_canon))

    verts = model.shaped_vertices(params.shape)
    posed = lbs_apply(verts, model.weights, transforms)
    posed_joints = globals_posed[:, :3, 3]
    return PoseState(model=model, transforms=transforms,
                     posed_vertices=posed, posed_joints=posed_joints)


def lbs_apply(points, weights, transforms):
    """Linear blend skinning of (n, 3) points with (n, J) weights."""
    # blended affine per point: (n, 3, 4)
    t34 = transforms[:, :3, :]                       # (J, 3, 4)
    blended = np.einsum("nj,jab->nab", weights, t34)
    return np.einsum("nab,nb->na", blended[:, :, :3], points) + blended[:, :, 3]


def skinning_weights_at(source, x):
    """Skinning weights of the nearest mesh vertex to point(s) x.

    `source` is a PoseState (posed mesh) or RiggedBodyModel (canonical mesh).
    Returns (weights, distance) for a single 3-vector, or arrays plus the
    vertex indices for an (n, 3) batch.  Exact nearest neighbor with
    lowest-vertex-index tie-breaking.
    """
    single = np.asarray(x).ndim == 1
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if isinstance(source, PoseState):
        tree, weights = source.spatial_index, source.model.weights
    else:
        tree, weights = source.canonical_tree, source.weights
    dist, idx = _query_lowest_index(tree, pts)
    if single:
        return weights[idx[0]].copy(), float(dist[0])
    return weights[idx], dist, idx


def _query_lowest_index(tree, pts):
    """Exact NN query; equidistant matches resolve to the lowest vertex index."""
    k = min(4, tree.n)
    dist, idx = tree.query(pts, k=k)
    if k == 1:
        return np.atleast_1d(dist), np.atleast_1d(idx)
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    best = dist[:, :1]
    tied = dist <= best  # exact float equality after identical arithmetic
    masked = np.where(tied, idx, tree.n + 1)
    return best[:, 0], masked.min(axis=1)


def bounding_box(state, margin=0.0):
    """Axis-aligned box of the posed vertices, dilated by `margin`."""
    return state.bounding_box(margin)


# -- body file I/O -------------------------------------------------------------

_ARRAY_FIELDS = ["vertices", "faces", "joints", "weights", "vertex_normals",
                 "shape_dirs", "face_colors"]


def save_body(dirpath, model):
    """Write body.json + body.bin into `dirpath`."""
    os.makedirs(dirpath, exist_ok=True)
    arrays = {}
    blob = bytearray()
    for name in _ARRAY_FIELDS:
        arr = getattr(model, name)
        if arr is None:
            continue
        if name == "faces":
            data = np.ascontiguousarray(arr, dtype="<i4")
        else:
            data = np.ascontiguousarray(arr, dtype="<f4")
        arrays[name] = {"offset": len(blob), "shape": list(data.shape),
                        "dtype": data.dtype.str}
        blob.extend(data.tobytes())
    header = {
        "version": BODY_VERSION,
        "parents": model.parents.tolist(),
        "arrays": arrays,
        "bin": "body.bin",
    }
    with open(os.path.join(dirpath, "body.json"), "w") as f:
        json.dump(header, f, indent=1)
    with open(os.path.join(dirpath, "body.bin"), "wb") as f:
        f.write(bytes(blob))


def load_body(json_path):
    """Load a rigged body from body.json (+ sidecar)."""
    with open(json_path) as f:
        header = json.load(f)
    if header.get("version") != BODY_VERSION:
        raise BodyValidationError(
            f"{json_path}: unsupported body version {header.get('version')!r}")
    bin_path = os.path.join(os.path.dirname(json_path), header["bin"])
    if not os.path.exists(bin_path):
        raise BodyValidationError(f"missing body sidecar {bin_path}")
    with open(bin_path, "rb") as f:
        blob = f.read()
    fields = {}
    for name, ent in header["arrays"].items():
        dt = np.dtype(ent["dtype"])
        count = int(np.prod(ent["shape"]))
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=ent["offset"])
        fields[name] = arr.reshape(ent["shape"]).copy()
    return RiggedBodyModel(
        vertices=fields["vertices"], faces=fields["faces"], joints=fields["joints"],
        parents=np.asarray(header["parents"]), weights=fields["weights"],
        vertex_normals=fields["vertex_normals"],
        shape_dirs=fields.get("shape_dirs"), face_colors=fields.get("face_colors"))
