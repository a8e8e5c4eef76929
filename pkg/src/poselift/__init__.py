"""poselift: occlusion-robust 3D pose lifting core.

Cylinder-man visibility, KCS/TKCS descriptors, occlusion augmentation,
a multi-stride temporal convolutional lifter with its loss stack, and
confidence-weighted inference-stage refinement, plus evaluation metrics
and a batch CLI.
"""

from .skeleton import (
    PoseSequence2D,
    PoseSequence3D,
    RotationAugment,
    SkeletonTopology,
    orthographic_project,
    procrustes_align,
    project_to_crop,
    rotate_pose,
    rotation_matrix,
)
from .pose_io import default_topology, read_topology

__version__ = "0.1.0"

__all__ = [
    "PoseSequence2D",
    "PoseSequence3D",
    "RotationAugment",
    "SkeletonTopology",
    "default_topology",
    "orthographic_project",
    "procrustes_align",
    "project_to_crop",
    "read_topology",
    "rotate_pose",
    "rotation_matrix",
    "__version__",
]
