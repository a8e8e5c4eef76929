"""Cylinder-man visibility under orthographic viewing.

The body is approximated by ten cylinders (head, torso, eight limb
segments). A keypoint P is tested against every cylinder whose projected
diametral cross-section rectangle contains the projection of P; each such
cylinder contributes an Iverson bracket [(P - P_i) . n > 0] with n the
rectangle normal pointing toward the camera (negative z). The hard label
is the product of brackets; the soft score relaxes each bracket with a
sigmoid of sharpness kappa (per mm) and takes the worst gated bracket.

Camera convention: at z = -infinity looking toward +z, projection drops z,
so "in front" means smaller z. The rectangle plane contains the bone axis
and the in-image lateral direction w = unit(u x z_hat), which maximizes the
rectangle's projected area; its normal n = unit(u x w) has n_z <= 0 by
construction (n_z = -(u_x^2 + u_y^2) before normalization).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import TopologyError
from .skeleton import PoseSequence3D, SkeletonTopology

KAPPA_DEFAULT = 0.1     # sigmoid sharpness, 1/mm
_EPS_SOFT = 1e-6        # soft scores clamped to (eps, 1-eps)
_EPS_GEOM = 1e-9


@dataclass(frozen=True)
class Cylinder:
    name: str
    radius_mm: float
    top: np.ndarray       # P_i
    bottom: np.ndarray    # P_j
    top_index: int
    bottom_index: int
    degenerate: bool      # zero height or radius: occludes nothing


@dataclass
class VisibilityReport:
    hard: np.ndarray        # K, {0,1}
    soft: np.ndarray        # K, in (0,1)
    occluder: list          # per keypoint: cylinder name or None


def build_cylinders(frame: np.ndarray, topo: SkeletonTopology) -> list:
    """The ten-part decomposition for one K x 3 pose frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (topo.K, 3):
        raise TopologyError(f"pose frame shape {frame.shape} does not match K={topo.K}")
    if not topo.cylinders:
        raise TopologyError("topology defines no cylinders")
    neck, sh_l, sh_r = topo.torso[0], topo.torso[1], topo.torso[2]
    torso_r = 0.5 * (np.linalg.norm(frame[sh_l] - frame[neck])
                     + np.linalg.norm(frame[sh_r] - frame[neck]))
    out = []
    for spec in topo.cylinders:
        r = torso_r if spec.radius_mm is None else spec.radius_mm
        top = frame[spec.top].copy()
        bottom = frame[spec.bottom].copy()
        height = np.linalg.norm(bottom - top)
        degenerate = height < _EPS_GEOM or r < _EPS_GEOM
        out.append(Cylinder(spec.name, float(r), top, bottom,
                            spec.top, spec.bottom, degenerate))
    return out


class _FrameGeometry:
    """Vectorized rectangle geometry for all cylinders of one frame."""

    def __init__(self, frame: np.ndarray, topo: SkeletonTopology):
        cyls = build_cylinders(frame, topo)
        self.cylinders = cyls
        c = len(cyls)
        self.tops = np.stack([cy.top for cy in cyls])
        bots = np.stack([cy.bottom for cy in cyls])
        self.radii = np.array([cy.radius_mm for cy in cyls])
        self.defining = np.array([[cy.top_index, cy.bottom_index] for cy in cyls])
        u = bots - self.tops
        w = np.stack([u[:, 1], -u[:, 0], np.zeros(c)], axis=1)  # u x z_hat
        wnorm = np.linalg.norm(w, axis=1)
        # edge-on axis (parallel to viewing direction) projects to a segment
        # and gates nothing; degenerate cylinders likewise
        self.valid = (wnorm > _EPS_GEOM) & ~np.array([cy.degenerate for cy in cyls])
        wn = np.where(wnorm[:, None] > _EPS_GEOM, wnorm[:, None], 1.0)
        self.w = w / wn
        n = np.cross(u, self.w)
        nnorm = np.linalg.norm(n, axis=1)
        nn = np.where(nnorm[:, None] > _EPS_GEOM, nnorm[:, None], 1.0)
        n = n / nn
        # flip any stray positive-z normal toward the camera
        flip = n[:, 2] > 0
        n[flip] *= -1.0
        self.n = n
        self.axis2d = (bots - self.tops)[:, :2]

    def brackets(self, points: np.ndarray):
        """Gate + plane tests for P (Q x 3) against all cylinders.

        Returns (gated Q x C bool, dist Q x C plane distances in mm).
        """
        points = np.atleast_2d(points)
        q2d = points[:, None, :2] - self.tops[None, :, :2]       # Q x C x 2
        e = self.axis2d[None, :, :]                              # 1 x C x 2
        w2 = self.w[None, :, :2]
        det = e[..., 0] * w2[..., 1] - e[..., 1] * w2[..., 0]
        safe = np.where(np.abs(det) > _EPS_GEOM, det, 1.0)
        a = (q2d[..., 0] * w2[..., 1] - q2d[..., 1] * w2[..., 0]) / safe
        b = (e[..., 0] * q2d[..., 1] - e[..., 1] * q2d[..., 0]) / safe
        contained = ((np.abs(det) > _EPS_GEOM)
                     & (a >= 0.0) & (a <= 1.0)
                     & (np.abs(b) <= self.radii[None, :]))
        gated = contained & self.valid[None, :]
        dist = np.einsum("qcd,cd->qc", points[:, None, :] - self.tops[None, :, :], self.n)
        return gated, dist


def frame_visibility(frame: np.ndarray, topo: SkeletonTopology,
                     kappa: float = KAPPA_DEFAULT) -> VisibilityReport:
    """Hard + soft visibility of every keypoint of one frame."""
    frame = np.asarray(frame, dtype=np.float64)
    geom = _FrameGeometry(frame, topo)
    gated, dist = geom.brackets(frame)
    # a keypoint is never occluded by a cylinder it defines
    for c, (i, j) in enumerate(geom.defining):
        gated[i, c] = False
        gated[j, c] = False
    front = dist > 0.0
    hard = np.all(front | ~gated, axis=1).astype(np.int64)
    # tanh form of the sigmoid avoids exp overflow at sharp kappa
    soft_brackets = 0.5 * (1.0 + np.tanh(0.5 * kappa * dist))
    soft_brackets = np.where(gated, soft_brackets, 1.0)
    soft = np.clip(soft_brackets.min(axis=1), _EPS_SOFT, 1.0 - _EPS_SOFT)
    occluder = []
    blocking = gated & ~front
    for k in range(frame.shape[0]):
        if hard[k]:
            occluder.append(None)
        else:
            cands = np.where(blocking[k])[0]
            deepest = cands[np.argmin(dist[k, cands])]
            occluder.append(geom.cylinders[deepest].name)
    return VisibilityReport(hard, soft, occluder)


def visibility(point_index: int, frame: np.ndarray, topo: SkeletonTopology,
               kappa: float = KAPPA_DEFAULT) -> dict:
    """Visibility of one keypoint: {'hard': 0|1, 'soft': (0,1), 'occluder': name|None}."""
    report = frame_visibility(frame, topo, kappa)
    return {"hard": int(report.hard[point_index]),
            "soft": float(report.soft[point_index]),
            "occluder": report.occluder[point_index]}


def sequence_visibility(pose_seq: PoseSequence3D, topo: SkeletonTopology) -> np.ndarray:
    """T x K boolean visibility (True = visible) over a sequence."""
    out = np.zeros((pose_seq.T, pose_seq.K), dtype=bool)
    for t in range(pose_seq.T):
        out[t] = frame_visibility(pose_seq.frames[t], topo).hard.astype(bool)
    return out
