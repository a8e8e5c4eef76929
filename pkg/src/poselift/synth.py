"""Synthetic articulated motion: smoothed angular random walks on the
kinematic tree, forward kinematics with constant bone lengths, multi-view
pairs by known rotations, and 2D detections with confidence-scaled noise
and cylinder-derived occlusion labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .skeleton import (
    PoseSequence2D,
    PoseSequence3D,
    RotationAugment,
    SkeletonTopology,
    project_to_crop,
    rotate_pose,
)
from .visibility import sequence_visibility

# rest offsets (mm) of the default 17-keypoint skeleton, child relative to
# parent, person upright facing the camera (-z), y up; torso-adjacent joints
# sit a few mm toward the camera so the rest pose has no keypoint exactly on
# a cylinder's diametral plane
REST_OFFSETS = {
    "hip_r": (-130.0, -20.0, -10.0),
    "knee_r": (0.0, -440.0, 0.0),
    "ankle_r": (0.0, -450.0, 0.0),
    "hip_l": (130.0, -20.0, -10.0),
    "knee_l": (0.0, -440.0, 0.0),
    "ankle_l": (0.0, -450.0, 0.0),
    "spine": (0.0, 230.0, -25.0),
    "neck": (0.0, 230.0, 25.0),
    "nose": (0.0, 115.0, -90.0),
    "head_top": (0.0, 140.0, 60.0),
    "shoulder_l": (180.0, -25.0, -10.0),
    "elbow_l": (15.0, -280.0, 10.0),
    "wrist_l": (0.0, -250.0, 0.0),
    "shoulder_r": (-180.0, -25.0, -10.0),
    "elbow_r": (-15.0, -280.0, 10.0),
    "wrist_r": (0.0, -250.0, 0.0),
}


@dataclass
class SyntheticMotionConfig:
    n_sequences: int = 8
    frames: int = 240
    seed: int = 0
    angle_step: float = 0.03          # rad/frame of raw joint noise
    smooth_window: int = 9            # moving-average width on the walk steps
    max_joint_angle: float = 0.8      # rad, rotation-vector norm clamp
    speed_multipliers: tuple = (1.0,)
    view_rotations: tuple = ()        # extra views as (alpha, beta, gamma)
    scale_mm: float = 2000.0          # crop edge in mm for 2D projection
    crop_px: float = 256.0
    noise_px: float = 2.0             # detection noise scale, pixels
    mask_occluded_prob: float = 0.5
    conf_visible: tuple = (0.65, 0.98)
    conf_occluded: tuple = (0.05, 0.35)
    yaw_step: float = 0.02            # rad/frame of global yaw walk
    wobble: float = 0.1               # rad, global pitch/roll amplitude

    def validate(self):
        if self.n_sequences < 1 or self.frames < 2:
            raise ConfigError("need n_sequences >= 1 and frames >= 2")
        if any(s <= 0 for s in self.speed_multipliers):
            raise ConfigError("speed multipliers must be > 0")
        if self.scale_mm <= 0 or self.crop_px <= 0:
            raise ConfigError("scale_mm and crop_px must be > 0")
        if self.smooth_window < 1:
            raise ConfigError("smooth_window must be >= 1")


@dataclass
class ViewData:
    rotation: RotationAugment
    pose3d: PoseSequence3D        # rotated ground truth
    det2d: PoseSequence2D         # noisy detections with conf + mask
    visible: np.ndarray           # T x K cylinder-model visibility


@dataclass
class SyntheticSequence:
    pose3d: PoseSequence3D        # canonical (view 0) motion
    views: list                   # ViewData, views[0] has identity rotation
    action: str


def _axis_angle_matrix(rotvec: np.ndarray) -> np.ndarray:
    """Rotation matrix from a rotation vector (Rodrigues)."""
    angle = np.linalg.norm(rotvec)
    if angle < 1e-12:
        return np.eye(3)
    axis = rotvec / angle
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def _smooth_walk(rng, n_steps: int, n_channels: int, step: float, window: int) -> np.ndarray:
    """Cumulative sum of moving-average smoothed Gaussian steps."""
    raw = rng.normal(0.0, step, size=(n_steps + window, n_channels))
    kernel = np.ones(window) / window
    smooth = np.stack([np.convolve(raw[:, c], kernel, mode="valid") for c in range(n_channels)], axis=1)
    return np.cumsum(smooth[:n_steps], axis=0)


def _resample(track: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Linear interpolation of a (N, C) track at fractional times."""
    base = np.arange(track.shape[0], dtype=np.float64)
    return np.stack([np.interp(times, base, track[:, c]) for c in range(track.shape[1])], axis=1)


def rest_offsets(topo: SkeletonTopology) -> np.ndarray:
    """M x 3 child-minus-parent rest offsets; requires known keypoint names."""
    out = np.zeros((topo.M, 3))
    for m, (_, child) in enumerate(topo.bones):
        name = topo.keypoint_names[child]
        if name not in REST_OFFSETS:
            raise ConfigError(f"no rest offset for keypoint {name!r}")
        out[m] = REST_OFFSETS[name]
    return out


def _fk(topo: SkeletonTopology, offsets: np.ndarray, rotvecs: np.ndarray,
        global_rots: np.ndarray) -> np.ndarray:
    """Forward kinematics: rotvecs (T, M, 3) local, global_rots (T, 3, 3)."""
    t_len = rotvecs.shape[0]
    frames = np.zeros((t_len, topo.K, 3))
    # bones are listed parent-before-child in the topology file; verify once
    placed = {topo.root_index}
    order = []
    pending = list(range(topo.M))
    while pending:
        progressed = False
        for m in list(pending):
            p, _ = topo.bones[m]
            if p in placed:
                order.append(m)
                placed.add(topo.bones[m][1])
                pending.remove(m)
                progressed = True
        if not progressed:
            raise ConfigError("bone list is not topologically ordered from the root")
    parent_of_bone = {c: m for m, (p, c) in enumerate(topo.bones)}
    for t in range(t_len):
        rots = {None: np.eye(3)}
        for m in order:
            p, c = topo.bones[m]
            parent_rot = rots[parent_of_bone.get(p)]
            local = _axis_angle_matrix(rotvecs[t, m])
            g = parent_rot @ local
            rots[m] = g
            frames[t, c] = frames[t, p] + g @ offsets[m]
        frames[t] = frames[t] @ global_rots[t].T
    return frames


def generate_sequence(cfg: SyntheticMotionConfig, topo: SkeletonTopology,
                      rng: np.random.Generator, speed: float) -> PoseSequence3D:
    """One kinematically consistent motion at the given speed multiplier."""
    offsets = rest_offsets(topo)
    base_len = int(np.ceil(cfg.frames * speed)) + 2
    walk = _smooth_walk(rng, base_len, topo.M * 3, cfg.angle_step, cfg.smooth_window)
    times = np.arange(cfg.frames) * speed
    rotvecs = _resample(walk, times).reshape(cfg.frames, topo.M, 3)
    norms = np.linalg.norm(rotvecs, axis=2, keepdims=True)
    scale = np.where(norms > cfg.max_joint_angle, cfg.max_joint_angle / np.maximum(norms, 1e-12), 1.0)
    rotvecs = rotvecs * scale
    yaw0 = rng.uniform(-np.pi, np.pi)
    yaw_walk = _smooth_walk(rng, base_len, 1, cfg.yaw_step, cfg.smooth_window)
    yaw = yaw0 + _resample(yaw_walk, times)[:, 0]
    pitch = cfg.wobble * np.sin(np.linspace(0, 2 * np.pi, cfg.frames) + rng.uniform(0, 2 * np.pi))
    global_rots = np.zeros((cfg.frames, 3, 3))
    for t in range(cfg.frames):
        global_rots[t] = RotationAugment(alpha=pitch[t], beta=yaw[t]).matrix()
    frames = _fk(topo, offsets, rotvecs, global_rots)
    frames -= frames[:, topo.root_index:topo.root_index + 1]  # keep root pinned
    return PoseSequence3D(frames)


def detections_for_view(pose3d: PoseSequence3D, topo: SkeletonTopology,
                        cfg: SyntheticMotionConfig, rng: np.random.Generator):
    """Noisy 2D detections + confidence + mask from one view's 3D pose."""
    visible = sequence_visibility(pose3d, topo)
    clean = project_to_crop(pose3d, cfg.scale_mm)
    t, k = pose3d.T, pose3d.K
    conf = np.where(visible,
                    rng.uniform(*cfg.conf_visible, size=(t, k)),
                    rng.uniform(*cfg.conf_occluded, size=(t, k)))
    # noisier detections at lower confidence
    std_px = cfg.noise_px * (1.3 - conf)
    noise = rng.normal(0.0, 1.0, size=(t, k, 2)) * (std_px / cfg.crop_px)[:, :, None]
    coords = clean.frames + noise
    mask = (~visible) & (rng.random((t, k)) < cfg.mask_occluded_prob)
    coords[mask] = 0.0
    conf[mask] = 0.0
    det = PoseSequence2D(coords, confidence=conf, mask=mask, scale_mm=cfg.scale_mm,
                         actions=pose3d.actions)
    return det, visible


def generate(cfg: SyntheticMotionConfig, topo: SkeletonTopology) -> list:
    """All sequences: speeds cycle over speed_multipliers; views[0] identity."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    view_rots = [RotationAugment()] + [RotationAugment(*v) for v in cfg.view_rotations]
    out = []
    for s in range(cfg.n_sequences):
        speed = cfg.speed_multipliers[s % len(cfg.speed_multipliers)]
        action = f"speed{speed:g}"
        pose = generate_sequence(cfg, topo, rng, speed)
        pose.actions = [action] * pose.T
        views = []
        for r in view_rots:
            vp = rotate_pose(pose, r)
            det, visible = detections_for_view(vp, topo, cfg, rng)
            vp.visibility = visible
            views.append(ViewData(r, vp, det, visible))
        out.append(SyntheticSequence(pose, views, action))
    return out
