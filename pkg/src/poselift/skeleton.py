"""Skeleton topology, pose containers, projection, rotation, Procrustes.

Conventions used everywhere downstream:
  - 3D coordinates in mm, root-relative (pelvis at the origin of each frame).
  - 2D coordinates normalized to the person crop, [0,1] on both axes.
  - The camera sits at z = -infinity looking toward +z, so orthographic
    projection just drops z and "toward the camera" means decreasing z.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, InvalidInputError, TopologyError


@dataclass(frozen=True)
class CylinderSpec:
    """One body cylinder: axis between two keypoints, fixed or pose-derived radius."""

    name: str
    top: int
    bottom: int
    radius_mm: Optional[float]  # None = torso rule (neck-to-shoulder distance per pose)


@dataclass(frozen=True)
class SkeletonTopology:
    keypoint_names: tuple
    bones: tuple            # (parent_index, child_index) pairs
    radii: np.ndarray       # per-bone cylinder radius, mm
    head: tuple             # (head_top_index, neck_index)
    torso: tuple            # (neck, shoulder_l, shoulder_r, hip_l, hip_r) indices
    cylinders: tuple = ()   # CylinderSpec list, the ten-part body decomposition
    root_name: str = "pelvis"

    def __post_init__(self):
        k = len(self.keypoint_names)
        if len(set(self.keypoint_names)) != k:
            raise TopologyError("duplicate keypoint names")
        for p, c in self.bones:
            if not (0 <= p < k and 0 <= c < k):
                raise TopologyError(f"bone ({p},{c}) out of range for K={k}")
        radii = np.asarray(self.radii, dtype=np.float64)
        if radii.shape != (len(self.bones),):
            raise TopologyError("need one radius per bone")
        if np.any(radii <= 0):
            raise TopologyError("all bone radii must be > 0")
        object.__setattr__(self, "radii", radii)
        # tree check: every non-root keypoint has exactly one parent, no cycles
        if self.root_name not in self.keypoint_names:
            raise TopologyError(f"root keypoint {self.root_name!r} missing")
        root = self.keypoint_names.index(self.root_name)
        parent = {c: p for p, c in self.bones}
        if root in parent:
            raise TopologyError("root keypoint has a parent")
        if len(parent) != len(self.bones):
            raise TopologyError("keypoint with two parents; bone graph is not a tree")
        for c in parent:
            seen = {c}
            node = c
            while node != root:
                if node not in parent:
                    raise TopologyError(f"keypoint {self.keypoint_names[node]} not connected to root")
                node = parent[node]
                if node in seen:
                    raise TopologyError("cycle in bone graph")
                seen.add(node)
        for spec in self.cylinders:
            for idx in (spec.top, spec.bottom):
                if not (0 <= idx < k):
                    raise TopologyError(f"cylinder {spec.name} references keypoint {idx} out of range")
            if spec.radius_mm is not None and spec.radius_mm <= 0:
                raise TopologyError(f"cylinder {spec.name} radius must be > 0")

    @property
    def K(self) -> int:
        return len(self.keypoint_names)

    @property
    def M(self) -> int:
        return len(self.bones)

    @property
    def root_index(self) -> int:
        return self.keypoint_names.index(self.root_name)

    def index(self, name: str) -> int:
        try:
            return self.keypoint_names.index(name)
        except ValueError:
            raise TopologyError(f"unknown keypoint {name!r}") from None

    def left_right_pairs(self) -> tuple:
        """(left_index, right_index) pairs derived from _l/_r name suffixes."""
        pairs = []
        for i, name in enumerate(self.keypoint_names):
            if name.endswith("_l"):
                other = name[:-2] + "_r"
                if other in self.keypoint_names:
                    pairs.append((i, self.keypoint_names.index(other)))
        return tuple(pairs)


@dataclass
class PoseSequence3D:
    """T x K x 3 keypoint trajectories in mm."""

    frames: np.ndarray
    visibility: Optional[np.ndarray] = None  # T x K, True = visible
    root_relative: bool = True
    actions: Optional[list] = None           # per-frame action tag, optional

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise InvalidInputError(f"3D frames must be T x K x 3, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise InvalidInputError("non-finite 3D coordinates")
        if self.visibility is not None:
            self.visibility = np.asarray(self.visibility, dtype=bool)
            if self.visibility.shape != self.frames.shape[:2]:
                raise InvalidInputError("visibility shape must be T x K")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def K(self) -> int:
        return self.frames.shape[1]

    def copy(self) -> "PoseSequence3D":
        return PoseSequence3D(
            self.frames.copy(),
            None if self.visibility is None else self.visibility.copy(),
            self.root_relative,
            None if self.actions is None else list(self.actions),
        )


@dataclass
class PoseSequence2D:
    """T x K x 2 detections in normalized crop units with confidence + mask.

    mask True means masked/unobserved; masked entries carry zero coordinates
    and zero confidence. scale_mm, when known, is the edge length of the crop
    in mm (x_norm = x_mm / scale_mm + 0.5 under orthographic viewing).
    """

    frames: np.ndarray
    confidence: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    scale_mm: Optional[float] = None
    actions: Optional[list] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 2:
            raise InvalidInputError(f"2D frames must be T x K x 2, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise InvalidInputError("non-finite 2D coordinates")
        t, k = self.frames.shape[:2]
        if self.confidence is None:
            self.confidence = np.ones((t, k), dtype=np.float64)
        else:
            self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.mask is None:
            self.mask = np.zeros((t, k), dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
        if self.confidence.shape != (t, k) or self.mask.shape != (t, k):
            raise InvalidInputError("confidence/mask shape must be T x K")
        if np.any(self.confidence < 0) or np.any(self.confidence > 1):
            raise InvalidInputError("confidence outside [0,1]")
        if np.any(self.confidence[self.mask] != 0):
            raise InvalidInputError("masked entries must carry confidence 0")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def K(self) -> int:
        return self.frames.shape[1]

    def copy(self) -> "PoseSequence2D":
        return PoseSequence2D(
            self.frames.copy(),
            self.confidence.copy(),
            self.mask.copy(),
            self.scale_mm,
            None if self.actions is None else list(self.actions),
        )


@dataclass(frozen=True)
class RotationAugment:
    """Euler angles (radians) about x, y, z; composed as Rz(gamma) Ry(beta) Rx(alpha)."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    # sampling ranges for augmentation draws
    BETA_RANGE = (-np.pi, np.pi)
    SIDE_RANGE = (-0.2 * np.pi, 0.2 * np.pi)

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "RotationAugment":
        a = rng.uniform(*cls.SIDE_RANGE)
        b = rng.uniform(*cls.BETA_RANGE)
        g = rng.uniform(*cls.SIDE_RANGE)
        return cls(alpha=a, beta=b, gamma=g)

    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.alpha, self.beta, self.gamma)


def rotation_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """R = Rz(gamma) @ Ry(beta) @ Rx(alpha)."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]], dtype=np.float64)
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]], dtype=np.float64)
    rz = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1]], dtype=np.float64)
    return rz @ ry @ rx


def rotate_pose(pose3d: PoseSequence3D, r: RotationAugment) -> PoseSequence3D:
    """Rotate every keypoint of every frame about the origin."""
    rm = r.matrix()
    out = pose3d.copy()
    out.frames = pose3d.frames @ rm.T
    return out


def orthographic_project(pose3d: PoseSequence3D) -> PoseSequence2D:
    """Drop z. Output keeps mm units; confidence 1, masks clear.

    Use project_to_crop to land in normalized crop units.
    """
    if not np.all(np.isfinite(pose3d.frames)):
        raise InvalidInputError("non-finite 3D coordinates")
    return PoseSequence2D(pose3d.frames[:, :, :2].copy(),
                          actions=None if pose3d.actions is None else list(pose3d.actions))


def project_to_crop(pose3d: PoseSequence3D, scale_mm: float) -> PoseSequence2D:
    """Orthographic projection into [0,1] crop units, crop centered on the origin."""
    if scale_mm <= 0:
        raise InvalidInputError("scale_mm must be > 0")
    flat = orthographic_project(pose3d)
    out = PoseSequence2D(flat.frames / scale_mm + 0.5, scale_mm=scale_mm,
                         actions=flat.actions)
    return out


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Similarity-align a single K x 3 pose to gt: returns s R pred + t.

    Least-squares over proper rotations (det = +1), positive scale, translation.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise InvalidInputError(f"pose shapes must match and be K x 3, got {pred.shape} vs {gt.shape}")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    xp = pred - mu_p
    xg = gt - mu_g
    norm_g = np.sqrt((xg ** 2).sum())
    if norm_g < 1e-9:
        raise DegenerateInputError("ground-truth pose has zero spread")
    norm_p = np.sqrt((xp ** 2).sum())
    if norm_p < 1e-9:
        # collapsed prediction: best fit puts every point at the gt centroid
        return np.tile(mu_g, (pred.shape[0], 1))
    m = xp.T @ xg  # 3x3 cross-covariance (unnormalized)
    u, s, vt = np.linalg.svd(m)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    d = np.array([1.0, 1.0, sign])
    rot = vt.T @ np.diag(d) @ u.T
    scale = (s * d).sum() / (norm_p ** 2)
    if scale <= 0:
        # reflection-dominated degenerate case; fall back to unscaled rotation
        scale = 1.0
    t = mu_g - scale * rot @ mu_p
    return scale * (rot @ pred.T).T + t
