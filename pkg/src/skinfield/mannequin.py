"""Procedural rigged mannequin: the stand-in body family for synthetic scenes.

24 joints in an SMPL-shaped hierarchy; the canonical mesh is stored directly
in the legs-apart canonical pose.  Subjects vary in global scale, limb
proportions, girth, and a seeded procedural texture.  Geometry is a union of
capsule-like parts, each rigidly bound to one joint and blended with its
parent joint near the proximal end, so volume skinning behaves like a typical
rigged character.
"""

from __future__ import annotations

import numpy as np

from .bodymodel import BodyParams, RiggedBodyModel

SMPL_PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
                         9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21])

JOINT_NAMES = [
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2",
    "l_ankle", "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar",
    "r_collar", "head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
    "l_wrist", "r_wrist", "l_hand", "r_hand",
]

J = {name: i for i, name in enumerate(JOINT_NAMES)}


def _joint_positions(rng):
    """Rest joint positions with seeded proportions; legs apart, arms in A-pose."""
    scale = rng.uniform(0.92, 1.08)
    leg_len = 0.82 * scale * rng.uniform(0.95, 1.05)
    torso = 0.51 * scale * rng.uniform(0.95, 1.05)
    arm = 0.55 * scale * rng.uniform(0.95, 1.05)
    hip_w = 0.085 * scale * rng.uniform(0.9, 1.1)
    sho_w = 0.165 * scale * rng.uniform(0.9, 1.1)
    spread = np.deg2rad(rng.uniform(9.0, 14.0))   # legs-apart angle
    a_pose = np.deg2rad(rng.uniform(35.0, 47.0))  # arm droop below horizontal

    pelvis_h = leg_len + 0.12 * scale
    p = np.zeros((24, 3))
    p[J["pelvis"]] = (0.0, pelvis_h, 0.0)
    p[J["l_hip"]] = (hip_w, pelvis_h - 0.035 * scale, 0.0)
    p[J["r_hip"]] = (-hip_w, pelvis_h - 0.035 * scale, 0.0)

    leg_dir_l = np.array([np.sin(spread), -np.cos(spread), 0.0])
    leg_dir_r = leg_dir_l * np.array([-1.0, 1.0, 1.0])
    thigh, shin = 0.46 * leg_len, 0.44 * leg_len
    p[J["l_knee"]] = p[J["l_hip"]] + thigh * leg_dir_l
    p[J["r_knee"]] = p[J["r_hip"]] + thigh * leg_dir_r
    p[J["l_ankle"]] = p[J["l_knee"]] + shin * leg_dir_l
    p[J["r_ankle"]] = p[J["r_knee"]] + shin * leg_dir_r
    foot = np.array([0.0, -0.045, 0.11]) * scale
    p[J["l_foot"]] = p[J["l_ankle"]] + foot
    p[J["r_foot"]] = p[J["r_ankle"]] + foot

    p[J["spine1"]] = (0.0, pelvis_h + 0.22 * torso, 0.0)
    p[J["spine2"]] = (0.0, pelvis_h + 0.45 * torso, 0.0)
    p[J["spine3"]] = (0.0, pelvis_h + 0.68 * torso, 0.0)
    p[J["neck"]] = (0.0, pelvis_h + torso, 0.0)
    p[J["head"]] = p[J["neck"]] + (0.0, 0.10 * scale, 0.0)
    p[J["l_collar"]] = (0.045 * scale, p[J["neck"]][1] - 0.03 * scale, 0.0)
    p[J["r_collar"]] = (-0.045 * scale, p[J["neck"]][1] - 0.03 * scale, 0.0)
    p[J["l_shoulder"]] = (sho_w, p[J["neck"]][1] - 0.035 * scale, 0.0)
    p[J["r_shoulder"]] = (-sho_w, p[J["neck"]][1] - 0.035 * scale, 0.0)

    arm_dir_l = np.array([np.cos(a_pose), -np.sin(a_pose), 0.0])
    arm_dir_r = arm_dir_l * np.array([-1.0, 1.0, 1.0])
    upper, fore, hand = 0.44 * arm, 0.42 * arm, 0.14 * arm
    p[J["l_elbow"]] = p[J["l_shoulder"]] + upper * arm_dir_l
    p[J["r_elbow"]] = p[J["r_shoulder"]] + upper * arm_dir_r
    p[J["l_wrist"]] = p[J["l_elbow"]] + fore * arm_dir_l
    p[J["r_wrist"]] = p[J["r_elbow"]] + fore * arm_dir_r
    p[J["l_hand"]] = p[J["l_wrist"]] + hand * arm_dir_l
    p[J["r_hand"]] = p[J["r_wrist"]] + hand * arm_dir_r
    return p, scale


def _frame(axis):
    axis = axis / np.linalg.norm(axis)
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


def _tube(p0, p1, r0, r1, joint, parent_joint, blend_frac=0.3,
          rings=6, segs=10, squash=1.0, cap=True):
    """Capsule-ish tube between p0 and p1 bound to `joint`.

    Returns (vertices, faces, weights pairs, t-params, radial dirs).
    Weight near the proximal end (t=0) blends toward `parent_joint`.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    u, v = _frame(axis)
    ts, radii, offs = [], [], []
    if cap:
        for cu in (0.85, 0.5):
            ts.append(0.0)
            radii.append(r0 * np.sqrt(1 - cu ** 2))
            offs.append(-cu * r0 * 0.8)
    for i in range(rings):
        ts.append(i / (rings - 1))
        radii.append(r0 + (r1 - r0) * ts[-1])
        offs.append(0.0)
    if cap:
        for cu in (0.5, 0.85):
            ts.append(1.0)
            radii.append(r1 * np.sqrt(1 - cu ** 2))
            offs.append(cu * r1 * 0.8)

    nv_ring = segs
    verts, weights, tpar, rdirs = [], [], [], []
    theta = np.linspace(0, 2 * np.pi, segs, endpoint=False)
    for t, r, off in zip(ts, radii, offs):
        center = p0 + (t + off / max(length, 1e-9)) * axis
        for th in theta:
            radial = np.cos(th) * u + np.sin(th) * v * squash
            verts.append(center + r * radial)
            w_parent = 0.5 * max(0.0, 1.0 - t / blend_frac) if parent_joint != joint else 0.0
            weights.append((joint, 1.0 - w_parent, parent_joint, w_parent))
            tpar.append(t)
            rdirs.append(radial / max(np.linalg.norm(radial), 1e-9))
    faces = []
    n_rings = len(ts)
    for i in range(n_rings - 1):
        for s in range(segs):
            a = i * nv_ring + s
            b = i * nv_ring + (s + 1) % segs
            c = (i + 1) * nv_ring + s
            d = (i + 1) * nv_ring + (s + 1) % segs
            faces.append((a, c, b))
            faces.append((b, c, d))
    return (np.asarray(verts), np.asarray(faces, dtype=np.int64),
            weights, np.asarray(tpar), np.asarray(rdirs))


def _vertex_normals(verts, faces):
    norm = np.zeros_like(verts)
    tris = verts[faces]
    fn = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    for k in range(3):
        np.add.at(norm, faces[:, k], fn)
    lens = np.linalg.norm(norm, axis=1, keepdims=True)
    lens[lens < 1e-12] = 1.0
    return norm / lens


def _palette(rng):
    """Seeded clothing/skin colors."""
    def hsv(h, s, v):
        import colorsys
        return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v))
    base_h = rng.uniform(0, 1)
    return {
        "skin": hsv(0.07 + rng.uniform(-0.02, 0.02), rng.uniform(0.25, 0.5), rng.uniform(0.55, 0.9)),
        "shirt": hsv(base_h, rng.uniform(0.55, 0.9), rng.uniform(0.45, 0.9)),
        "pants": hsv(base_h + rng.uniform(0.3, 0.5), rng.uniform(0.5, 0.9), rng.uniform(0.3, 0.7)),
        "shoes": hsv(rng.uniform(0, 1), rng.uniform(0.2, 0.6), rng.uniform(0.15, 0.4)),
        "accent": hsv(base_h + 0.5, rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0)),
    }


def build_mannequin(seed=0):
    """A complete rigged subject; identical seeds give identical bodies."""
    rng = np.random.default_rng(seed)
    joints, scale = _joint_positions(rng)
    pal = _palette(rng)
    g = rng.uniform(0.9, 1.12)  # girth factor

    def jp(name):
        return joints[J[name]]

    parts = []
    # (p0, p1, r0, r1, joint, parent_joint, color_group, squash, stripes)
    torso_lo = jp("pelvis") + (0, -0.06 * scale, 0)
    parts.append((torso_lo, jp("spine1"), 0.125 * g, 0.118 * g, J["spine1"], J["pelvis"], "pants", 0.72, False))
    parts.append((jp("spine1"), jp("spine2"), 0.118 * g, 0.112 * g, J["spine2"], J["spine1"], "shirt", 0.72, True))
    parts.append((jp("spine2"), jp("spine3"), 0.112 * g, 0.115 * g, J["spine3"], J["spine2"], "shirt", 0.74, True))
    parts.append((jp("spine3"), jp("neck"), 0.115 * g, 0.085 * g, J["neck"], J["spine3"], "shirt", 0.78, True))
    parts.append((jp("neck"), jp("head") + (0, 0.04 * scale, 0), 0.045 * g, 0.05 * g, J["head"], J["neck"], "skin", 1.0, False))
    head_top = jp("head") + (0, 0.16 * scale, 0)
    parts.append((jp("head") - (0, 0.02 * scale, 0), head_top, 0.085 * g, 0.07 * g, J["head"], J["head"], "skin", 0.92, False))

    for side in ("l", "r"):
        parts.append((jp(f"{side}_shoulder"), jp(f"{side}_elbow"), 0.047 * g, 0.038 * g,
                      J[f"{side}_shoulder"], J[f"{side}_collar"], "shirt", 1.0, True))
        parts.append((jp(f"{side}_elbow"), jp(f"{side}_wrist"), 0.036 * g, 0.028 * g,
                      J[f"{side}_elbow"], J[f"{side}_shoulder"], "skin", 1.0, False))
        parts.append((jp(f"{side}_wrist"), jp(f"{side}_hand") + (0, -0.02 * scale, 0),
                      0.027 * g, 0.018 * g, J[f"{side}_wrist"], J[f"{side}_elbow"], "skin", 0.8, False))
        parts.append((jp(f"{side}_hip"), jp(f"{side}_knee"), 0.068 * g, 0.051 * g,
                      J[f"{side}_hip"], J["pelvis"], "pants", 1.0, True))
        parts.append((jp(f"{side}_knee"), jp(f"{side}_ankle"), 0.048 * g, 0.032 * g,
                      J[f"{side}_knee"], J[f"{side}_hip"], "pants", 1.0, False))
        parts.append((jp(f"{side}_ankle") + (0, 0.01, 0), jp(f"{side}_foot") + (0, -0.01, 0.05 * scale),
                      0.036 * g, 0.024 * g, J[f"{side}_ankle"], J[f"{side}_knee"], "shoes", 0.75, False))

    all_v, all_f, all_w, all_c, all_sd = [], [], [], [], []
    v_off = 0
    for (p0, p1, r0, r1, joint, parent, group, squash, stripes) in parts:
        v, f, wpairs, tpar, rdirs = _tube(p0, p1, r0, r1, joint, parent, squash=squash)
        all_v.append(v)
        all_f.append(f + v_off)
        w = np.zeros((len(v), 24))
        for i, (j1, w1, j2, w2) in enumerate(wpairs):
            w[i, j1] += w1
            if w2 > 0:
                w[i, j2] += w2
        all_w.append(w)
        all_sd.append(rdirs * 0.04)   # single "girth" shape direction

        base = pal[group]
        stripe_freq = rng.integers(3, 6)
        stripe_phase = rng.uniform(0, np.pi)
        fc = np.zeros((len(f), 3))
        centers_t = tpar[f].mean(axis=1)
        for i in range(len(f)):
            c = base.copy()
            if stripes and np.sin(stripe_freq * np.pi * centers_t[i] + stripe_phase) > 0.15:
                c = 0.55 * c + 0.45 * pal["accent"]
            fc[i] = np.clip(c * rng.uniform(0.95, 1.05), 0.02, 0.98)
        all_c.append(fc)
        v_off += len(v)

    vertices = np.concatenate(all_v)
    faces = np.concatenate(all_f)
    weights = np.concatenate(all_w)
    face_colors = np.concatenate(all_c)
    shape_dirs = np.concatenate(all_sd)[None, :, :]
    normals = _vertex_normals(vertices, faces)
    return RiggedBodyModel(vertices=vertices, faces=faces, joints=joints,
                           parents=SMPL_PARENTS.copy(), weights=weights,
                           vertex_normals=normals, shape_dirs=shape_dirs,
                           face_colors=face_colors)


# axis-angle bounds per joint: (low, high) arrays of shape (3,)
_LIMITS = {
    "pelvis": ([-0.15, -0.5, -0.15], [0.15, 0.5, 0.15]),
    "hip": ([-0.45, -0.15, -0.2], [0.35, 0.15, 0.3]),
    "knee": ([0.0, -0.05, -0.05], [0.9, 0.05, 0.05]),
    "ankle": ([-0.25, -0.1, -0.1], [0.25, 0.1, 0.1]),
    "foot": ([-0.15, 0.0, 0.0], [0.15, 0.0, 0.0]),
    "spine": ([-0.12, -0.2, -0.12], [0.12, 0.2, 0.12]),
    "neck": ([-0.2, -0.3, -0.15], [0.2, 0.3, 0.15]),
    "head": ([-0.25, -0.35, -0.15], [0.25, 0.35, 0.15]),
    "collar": ([-0.08, -0.08, -0.08], [0.08, 0.08, 0.08]),
    "shoulder": ([-0.4, -0.35, -0.55], [0.4, 0.35, 0.35]),
    "elbow": ([-0.1, -0.9, -0.6], [0.1, 0.1, 0.6]),
    "wrist": ([-0.2, -0.2, -0.2], [0.2, 0.2, 0.2]),
    "hand": ([-0.1, -0.1, -0.1], [0.1, 0.1, 0.1]),
}


def _limit_for(name):
    for key in ("hip", "knee", "ankle", "foot", "spine", "neck", "collar",
                "shoulder", "elbow", "wrist", "hand", "head", "pelvis"):
        if key in name:
            return _LIMITS[key]
    return _LIMITS["wrist"]


def sample_pose(rng, num_joints=24, intensity=1.0):
    """Random pose within per-joint axis-angle limits."""
    pose = np.zeros((num_joints, 3))
    for i, name in enumerate(JOINT_NAMES[:num_joints]):
        lo, hi = _limit_for(name)
        pose[i] = rng.uniform(np.asarray(lo) * intensity, np.asarray(hi) * intensity)
        # mirror one-sided limits for the right side
        if name.startswith("r_") and name[2:] in ("elbow",):
            pose[i, 1:] = -pose[i, 1:]
    translation = rng.uniform(-0.04, 0.04, 3)
    return BodyParams(pose=pose, translation=translation)
