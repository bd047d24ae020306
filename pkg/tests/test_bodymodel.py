"""Forward kinematics, skinning weight queries, and bounding boxes."""

import numpy as np
import pytest

from skinfield.bodymodel import (BodyParams, BodyValidationError, PoseState,
                                 RiggedBodyModel, SkeletonError, bounding_box,
                                 forward_kinematics, lbs_apply, load_body,
                                 rodrigues, save_body, skinning_weights_at)


def two_link_model():
    """Root at origin, child joint at (0, 1, 0); a few probe vertices."""
    vertices = np.array([
        [0.0, 0.5, 0.0],   # mid lower link
        [0.0, 1.5, 0.0],   # mid upper link
        [0.1, 0.2, 0.0],
        [0.1, 1.8, 0.0],
    ])
    weights = np.array([
        [1.0, 0.0],
        [0.0, 1.0],
        [1.0, 0.0],
        [0.0, 1.0],
    ])
    normals = np.tile([1.0, 0.0, 0.0], (4, 1))
    faces = np.array([[0, 1, 2], [1, 2, 3]])
    return RiggedBodyModel(vertices=vertices, faces=faces,
                           joints=np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
                           parents=np.array([-1, 0]), weights=weights,
                           vertex_normals=normals)


def test_rest_pose_is_identity():
    model = two_link_model()
    state = forward_kinematics(model, BodyParams.rest(2))
    assert np.allclose(state.transforms, np.eye(4)[None], atol=1e-12)
    assert np.allclose(state.posed_vertices, model.vertices, atol=1e-12)


def test_root_rotation_is_shared_rigid_motion():
    model = two_link_model()
    aa = np.array([[0.0, 0.0, np.pi / 2], [0.0, 0.0, 0.0]])
    state = forward_kinematics(model, BodyParams(pose=aa, translation=np.zeros(3)))
    rot = rodrigues(aa[:1])[0]
    for t in state.transforms:
        assert np.allclose(t[:3, :3], rot, atol=1e-12)
        # rotation about the root pivot (origin) has no translation part here
        assert np.allclose(t[:3, 3], 0.0, atol=1e-12)


def test_two_link_chain_matches_matrix_chain_oracle():
    # Hand-rolled oracle: child rotation of 90 deg about z applied about the
    # child joint pivot at (0, 1, 0).
    model = two_link_model()
    aa = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, np.pi / 2]])
    state = forward_kinematics(model, BodyParams(pose=aa, translation=np.zeros(3)))

    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    pivot = np.array([0.0, 1.0, 0.0])
    for k in (1, 3):  # vertices bound to the child joint
        expected = rz @ (model.vertices[k] - pivot) + pivot
        assert np.linalg.norm(state.posed_vertices[k] - expected) <= 1e-6
    for k in (0, 2):  # root-bound vertices unchanged
        assert np.linalg.norm(state.posed_vertices[k] - model.vertices[k]) <= 1e-6


def test_posed_vertices_equal_lbs_of_canonical():
    rng = np.random.default_rng(0)
    model = two_link_model()
    aa = rng.uniform(-0.8, 0.8, (2, 3))
    state = forward_kinematics(model, BodyParams(pose=aa, translation=rng.uniform(-1, 1, 3)))
    again = lbs_apply(model.vertices, model.weights, state.transforms)
    assert np.max(np.linalg.norm(again - state.posed_vertices, axis=1)) <= 1e-6


def test_transforms_are_rigid():
    rng = np.random.default_rng(4)
    model = two_link_model()
    aa = rng.uniform(-1.5, 1.5, (2, 3))
    state = forward_kinematics(model, BodyParams(pose=aa, translation=np.zeros(3)))
    for t in state.transforms:
        r = t[:3, :3]
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-5)
        assert np.linalg.det(r) > 0


def test_non_tree_hierarchy_rejected():
    with pytest.raises(SkeletonError):
        RiggedBodyModel(vertices=np.zeros((1, 3)), faces=np.zeros((1, 3), dtype=int),
                        joints=np.zeros((2, 3)), parents=np.array([-1, 1]),
                        weights=np.ones((1, 2)) * 0.5,
                        vertex_normals=np.array([[1.0, 0, 0]]))


def test_weight_sum_validation_names_vertex():
    w = np.array([[1.0, 0.0], [0.6, 0.2]])
    with pytest.raises(BodyValidationError, match="vertex 1"):
        RiggedBodyModel(vertices=np.zeros((2, 3)), faces=np.zeros((1, 3), dtype=int),
                        joints=np.zeros((2, 3)), parents=np.array([-1, 0]),
                        weights=w, vertex_normals=np.tile([1.0, 0, 0], (2, 1)))


def test_weights_at_vertex_is_exact():
    model = two_link_model()
    w, d = skinning_weights_at(model, model.vertices[2])
    assert d == 0.0
    assert np.array_equal(w, model.weights[2])


def test_weights_tie_breaks_to_lower_index():
    # Point exactly between vertices 0 (0, 0.5, 0) and 1 (0, 1.5, 0).
    model = two_link_model()
    w, d = skinning_weights_at(model, np.array([0.0, 1.0, 0.0]))
    assert d == pytest.approx(0.5)
    assert np.array_equal(w, model.weights[0])


def test_nearest_vertex_matches_brute_force_on_1000_points():
    rng = np.random.default_rng(9)
    verts = rng.uniform(-1, 1, (300, 3))
    weights = np.zeros((300, 4))
    weights[np.arange(300), rng.integers(0, 4, 300)] = 1.0
    normals = rng.standard_normal((300, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    model = RiggedBodyModel(vertices=verts, faces=np.zeros((1, 3), dtype=int),
                            joints=np.zeros((4, 3)), parents=np.array([-1, 0, 0, 1]),
                            weights=weights, vertex_normals=normals)
    pts = rng.uniform(-1.2, 1.2, (1000, 3))
    _, _, idx = skinning_weights_at(model, pts)
    # brute force oracle (argmin returns the lowest index at exact ties)
    d2 = ((pts[:, None, :] - verts[None, :, :]) ** 2).sum(axis=2)
    expected = np.argmin(d2, axis=1)
    assert np.array_equal(idx, expected)


def test_voronoi_constancy():
    model = two_link_model()
    w1, _ = skinning_weights_at(model, np.array([0.02, 0.45, 0.01]))
    w2, _ = skinning_weights_at(model, np.array([-0.03, 0.55, -0.02]))
    assert np.array_equal(w1, w2)


def test_bounding_box_unit_cube():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    model = RiggedBodyModel(vertices=corners, faces=np.zeros((1, 3), dtype=int),
                            joints=np.zeros((1, 3)), parents=np.array([-1]),
                            weights=np.ones((8, 1)),
                            vertex_normals=np.tile([1.0, 0, 0], (8, 1)))
    state = forward_kinematics(model, BodyParams.rest(1))
    box = bounding_box(state, margin=0.0)
    assert np.allclose(box.lo, 0) and np.allclose(box.hi, 1)
    box2 = bounding_box(state, margin=0.05)
    assert np.allclose(box2.lo, -0.05) and np.allclose(box2.hi, 1.05)
    assert (box2.lo < box.lo).all() and (box2.hi > box.hi).all()


def test_bounding_box_contains_posed_vertices():
    rng = np.random.default_rng(2)
    model = two_link_model()
    state = forward_kinematics(model, BodyParams(pose=rng.uniform(-1, 1, (2, 3)),
                                                 translation=rng.uniform(-1, 1, 3)))
    box = bounding_box(state, margin=0.0)
    assert box.contains(state.posed_vertices, atol=1e-12).all()


def test_shape_direction_offsets():
    model = two_link_model()
    model.shape_dirs = np.ones((1, 4, 3)) * 0.1
    shaped = model.shaped_vertices(np.array([2.0]))
    assert np.allclose(shaped, model.vertices + 0.2)
    state = forward_kinematics(model, BodyParams(pose=np.zeros((2, 3)),
                                                 translation=np.zeros(3),
                                                 shape=np.array([2.0])))
    assert np.allclose(state.posed_vertices, model.vertices + 0.2)


def test_body_io_roundtrip(tmp_path):
    model = two_link_model()
    model.shape_dirs = np.random.default_rng(0).standard_normal((1, 4, 3)).astype(np.float32) * 0.01
    model.face_colors = np.array([[0.2, 0.4, 0.6], [0.8, 0.1, 0.3]])
    save_body(tmp_path / "body", model)
    loaded = load_body(str(tmp_path / "body" / "body.json"))
    assert np.allclose(loaded.vertices, model.vertices, atol=1e-6)
    assert np.array_equal(loaded.faces, model.faces)
    assert np.allclose(loaded.weights, model.weights, atol=1e-6)
    assert np.allclose(loaded.face_colors, model.face_colors, atol=1e-6)
    assert loaded.shape_dirs.shape == (1, 4, 3)
