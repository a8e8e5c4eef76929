import numpy as np
import pytest

from poselift.errors import InvalidWindowError
from poselift.kcs import (
    bone_matrix,
    discriminator_features,
    feature_length,
    kcs,
    tkcs,
    upper_triangle,
)
from poselift.skeleton import PoseSequence3D, RotationAugment, SkeletonTopology, rotate_pose

from conftest import random_cloud_pose


def tiny_topo(n_bones=2):
    # chain pelvis -> a -> b (or shorter)
    names = ("pelvis", "a", "b")[:n_bones + 1]
    bones = tuple((i, i + 1) for i in range(n_bones))
    return SkeletonTopology(names, bones, np.full(n_bones, 50.0),
                            (n_bones, 0), (0,) * 5)


def test_bone_matrix_single_bone():
    t = tiny_topo(1)
    frame = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    b = bone_matrix(frame, t)
    assert b.shape == (3, 1)
    assert np.array_equal(b[:, 0], [2.0, 0.0, 0.0])


def test_bone_matrix_translation_invariant(topo):
    rng = np.random.default_rng(0)
    frame = random_cloud_pose(rng, topo)
    shifted = frame + np.array([10.0, -20.0, 30.0])
    assert np.allclose(bone_matrix(frame, topo), bone_matrix(shifted, topo))


def test_bone_matrix_matches_subtraction_oracle(topo):
    rng = np.random.default_rng(1)
    frame = random_cloud_pose(rng, topo)
    b = bone_matrix(frame, topo)
    for m, (p, c) in enumerate(topo.bones):
        assert np.allclose(b[:, m], frame[c] - frame[p])


def test_kcs_orthogonal_unit_bones():
    t = tiny_topo(2)
    frame = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
    assert np.allclose(kcs(frame, t), np.eye(2))


def test_kcs_single_bone_length_two():
    t = tiny_topo(1)
    frame = np.array([[0.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    assert np.allclose(kcs(frame, t), [[4.0]])


def test_kcs_algebra(topo):
    rng = np.random.default_rng(2)
    for _ in range(50):
        frame = random_cloud_pose(rng, topo)
        psi = kcs(frame, topo)
        scale = np.abs(psi).max()
        assert np.allclose(psi, psi.T, atol=1e-9 * scale)
        eigvals = np.linalg.eigvalsh(psi)
        assert eigvals.min() >= -1e-9 * scale
        for m, (p, c) in enumerate(topo.bones):
            assert abs(psi[m, m] - ((frame[c] - frame[p]) ** 2).sum()) <= 1e-9 * scale


def test_kcs_rotation_invariant(topo):
    rng = np.random.default_rng(3)
    for _ in range(20):
        frame = random_cloud_pose(rng, topo)
        r = RotationAugment.sample(rng)
        rotated = rotate_pose(PoseSequence3D(frame[None]), r).frames[0]
        a, b = kcs(frame, topo), kcs(rotated, topo)
        assert np.allclose(a, b, atol=1e-9 * max(np.abs(a).max(), 1.0))


def test_kcs_offdiagonal_is_cos_angle(topo):
    rng = np.random.default_rng(4)
    frame = random_cloud_pose(rng, topo)
    psi = kcs(frame, topo)
    b = bone_matrix(frame, topo)
    for m in range(topo.M):
        for n in range(m + 1, topo.M):
            lm, ln = np.linalg.norm(b[:, m]), np.linalg.norm(b[:, n])
            cos = b[:, m] @ b[:, n] / (lm * ln)
            assert abs(psi[m, n] - lm * ln * cos) <= 1e-9 * abs(psi).max()


def test_tkcs_identical_frames_zero(topo):
    rng = np.random.default_rng(5)
    frame = random_cloud_pose(rng, topo)
    assert np.allclose(tkcs(frame, frame, topo), 0.0)


def test_tkcs_bone_growth_diagonal():
    t = tiny_topo(1)
    f0 = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    f1 = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    phi = tkcs(f0, f1, t)
    assert np.allclose(phi, [[3.0]])  # 4 - 1


def test_tkcs_antisymmetric_and_matches_kcs_difference(topo):
    rng = np.random.default_rng(6)
    f0 = random_cloud_pose(rng, topo)
    f1 = random_cloud_pose(rng, topo)
    phi = tkcs(f0, f1, topo)
    assert np.allclose(phi, -(tkcs(f1, f0, topo)))
    assert np.allclose(phi, kcs(f1, topo) - kcs(f0, topo))


def test_upper_triangle_order():
    mat = np.array([[1.0, 2.0], [2.0, 5.0]])
    assert np.array_equal(upper_triangle(mat), [1.0, 2.0, 5.0])


def test_feature_length_and_shape(topo):
    rng = np.random.default_rng(7)
    frames = np.stack([random_cloud_pose(rng, topo) for _ in range(6)])
    feats = discriminator_features(PoseSequence3D(frames), topo, interval=1)
    m, k = topo.M, topo.K
    assert feature_length(topo) == m * (m + 1) // 2 * 2 + 3 * k
    assert feats.shape == (6, feature_length(topo))
    assert feature_length(topo) == 323  # default 17-keypoint topology


def test_features_constant_window_phi_zero(topo):
    rng = np.random.default_rng(8)
    frame = random_cloud_pose(rng, topo)
    frames = np.tile(frame, (5, 1, 1))
    feats = discriminator_features(PoseSequence3D(frames), topo)
    m = topo.M
    n_psi = m * (m + 1) // 2
    assert np.allclose(feats[:, n_psi:2 * n_psi], 0.0)


def test_features_tail_zero_padding(topo):
    rng = np.random.default_rng(9)
    frames = np.stack([random_cloud_pose(rng, topo) for _ in range(7)])
    interval = 2
    feats = discriminator_features(PoseSequence3D(frames), topo, interval=interval)
    m = topo.M
    n_psi = m * (m + 1) // 2
    phi_block = feats[:, n_psi:2 * n_psi]
    assert np.allclose(phi_block[-interval:], 0.0)
    assert not np.allclose(phi_block[0], 0.0)
    # per-frame cross-check against the two-call definition
    want = upper_triangle(tkcs(frames[0], frames[interval], topo))
    assert np.allclose(phi_block[0], want)


def test_features_rotation_changes_only_coordinate_block(topo):
    rng = np.random.default_rng(10)
    frames = np.stack([random_cloud_pose(rng, topo) for _ in range(5)])
    window = PoseSequence3D(frames)
    rotated = rotate_pose(window, RotationAugment.sample(rng))
    a = discriminator_features(window, topo)
    b = discriminator_features(rotated, topo)
    m = topo.M
    n_desc = m * (m + 1)  # Psi and Phi blocks together
    scale = np.abs(a[:, :n_desc]).max()
    assert np.allclose(a[:, :n_desc], b[:, :n_desc], atol=1e-9 * scale)
    assert not np.allclose(a[:, n_desc:], b[:, n_desc:])


def test_features_window_too_short(topo):
    frames = np.zeros((1, topo.K, 3))
    with pytest.raises(InvalidWindowError):
        discriminator_features(PoseSequence3D(frames), topo, interval=1)
