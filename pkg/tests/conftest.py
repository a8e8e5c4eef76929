import numpy as np
import pytest

from poselift.pose_io import default_topology


@pytest.fixture(scope="session")
def topo():
    return default_topology()


def random_cloud_pose(rng, topo, spread=300.0):
    """Arbitrary point-cloud pose (no anthropometry), root at origin."""
    frame = rng.normal(0.0, spread, size=(topo.K, 3))
    frame[topo.root_index] = 0.0
    return frame


def rest_pose(topo):
    """Canonical upright pose facing the camera, built from rest offsets."""
    from poselift.synth import REST_OFFSETS

    frame = np.zeros((topo.K, 3))
    for p, c in topo.bones:
        frame[c] = frame[p] + np.array(REST_OFFSETS[topo.keypoint_names[c]])
    return frame


def plausible_pose_bank(topo, n_poses, seed=0):
    """Frames pooled from synthetic motion, varied yaw and articulation."""
    from poselift.synth import SyntheticMotionConfig, generate

    per_seq = 200
    n_seq = (n_poses + per_seq - 1) // per_seq
    cfg = SyntheticMotionConfig(n_sequences=n_seq, frames=per_seq, seed=seed,
                                angle_step=0.05, speed_multipliers=(1.0, 2.0))
    seqs = generate(cfg, topo)
    frames = np.concatenate([s.pose3d.frames for s in seqs], axis=0)
    return frames[:n_poses]
