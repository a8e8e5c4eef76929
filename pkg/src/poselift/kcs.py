"""Kinematic Chain Space descriptors.

B is the 3 x M bone matrix of a frame (column m = child - parent, mm).
Psi = B^T B is the spatial descriptor: diagonal = squared bone lengths,
off-diagonal (m, n) = |b_m||b_n| cos(angle between bones m and n).
Phi = Psi_{t+i} - Psi_t is the temporal descriptor over interval i.
Both are invariant to rotation and translation of the pose.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidWindowError
from .skeleton import PoseSequence3D, SkeletonTopology


def bone_incidence(topo: SkeletonTopology) -> np.ndarray:
    """K x M matrix C with frame.T @ C = bone matrix (child minus parent)."""
    c = np.zeros((topo.K, topo.M))
    for m, (p, ch) in enumerate(topo.bones):
        c[ch, m] = 1.0
        c[p, m] = -1.0
    return c


def bone_matrix(frame: np.ndarray, topo: SkeletonTopology) -> np.ndarray:
    """3 x M bone vectors of one K x 3 frame."""
    frame = np.asarray(frame, dtype=np.float64)
    return frame.T @ bone_incidence(topo)


def kcs(frame: np.ndarray, topo: SkeletonTopology) -> np.ndarray:
    b = bone_matrix(frame, topo)
    return b.T @ b


def tkcs(frame_t: np.ndarray, frame_t_plus_i: np.ndarray, topo: SkeletonTopology) -> np.ndarray:
    return kcs(frame_t_plus_i, topo) - kcs(frame_t, topo)


def upper_triangle(mat: np.ndarray) -> np.ndarray:
    """Flatten the upper triangle (diagonal included), fixed row-major order."""
    m = mat.shape[0]
    iu = np.triu_indices(m)
    return np.asarray(mat)[iu]


def feature_length(topo: SkeletonTopology) -> int:
    m, k = topo.M, topo.K
    return m * (m + 1) + 3 * k


def discriminator_features(window: PoseSequence3D, topo: SkeletonTopology,
                           interval: int = 1) -> np.ndarray:
    """Per-frame [upper(Psi_t) | upper(Phi_t) | coords] feature rows.

    Phi is zero for the last `interval` frames (no future frame to diff
    against); coordinates are the raw 3K mm values of the frame.
    """
    if interval < 1:
        raise InvalidWindowError(f"interval must be >= 1, got {interval}")
    t = window.T
    if t < interval + 1:
        raise InvalidWindowError(f"window length {t} < interval + 1 = {interval + 1}")
    c = bone_incidence(topo)
    frames = window.frames
    b = np.einsum("tkd,km->tdm", frames, c)          # T x 3 x M
    psi = np.einsum("tdm,tdn->tmn", b, b)            # T x M x M
    iu = np.triu_indices(topo.M)
    psi_flat = psi[:, iu[0], iu[1]]
    phi_flat = np.zeros_like(psi_flat)
    phi_flat[:t - interval] = psi_flat[interval:] - psi_flat[:t - interval]
    coords = frames.reshape(t, -1)
    return np.concatenate([psi_flat, phi_flat, coords], axis=1)
