import numpy as np
import pytest

from poselift.errors import ConfigError, InvalidInputError, TopologyError
from poselift.pose_io import (
    cfg_floats,
    cfg_get,
    cfg_ints,
    load_checkpoint,
    parse_config,
    parse_topology,
    read_pose2d,
    read_pose3d,
    save_checkpoint,
    write_pose2d,
    write_pose3d,
)
from poselift.skeleton import PoseSequence2D, PoseSequence3D


def test_pose3d_roundtrip(tmp_path, topo):
    rng = np.random.default_rng(0)
    frames = rng.normal(0, 300, size=(5, topo.K, 3))
    frames[:, topo.root_index] = 0.0
    vis = rng.random((5, topo.K)) > 0.3
    pose = PoseSequence3D(frames, visibility=vis, actions=["walk"] * 5)
    path = tmp_path / "p.csv"
    write_pose3d(path, pose, topo)
    back = read_pose3d(path, topo)
    assert np.allclose(back.frames, frames, atol=1e-6)
    assert np.array_equal(back.visibility, vis)
    assert back.root_relative
    assert back.actions == ["walk"] * 5


def test_pose2d_roundtrip(tmp_path, topo):
    rng = np.random.default_rng(1)
    frames = rng.random((4, topo.K, 2))
    conf = rng.random((4, topo.K))
    mask = rng.random((4, topo.K)) < 0.2
    frames[mask] = 0.0
    conf[mask] = 0.0
    pose = PoseSequence2D(frames, confidence=conf, mask=mask, scale_mm=2000.0)
    path = tmp_path / "d.csv"
    write_pose2d(path, pose, topo)
    back = read_pose2d(path, topo)
    assert np.allclose(back.frames, frames, atol=1e-6)
    assert np.allclose(back.confidence, conf, atol=1e-6)
    assert np.array_equal(back.mask, mask)
    assert back.scale_mm == 2000.0


def test_read_pose_missing_record(tmp_path, topo):
    path = tmp_path / "bad.csv"
    path.write_text("frame,keypoint,x,y,z,conf,mask\n0,pelvis,0,0,0,1,0\n")
    with pytest.raises(InvalidInputError):
        read_pose3d(path, topo)


def test_read_pose_unknown_keypoint(tmp_path, topo):
    path = tmp_path / "bad.csv"
    path.write_text("frame,keypoint,x,y,z,conf,mask\n0,knuckle,0,0,0,1,0\n")
    with pytest.raises(TopologyError):
        read_pose3d(path, topo)


def test_topology_parse_errors():
    with pytest.raises(TopologyError):
        parse_topology("keypoint a\nbone a b 50\nhead a a\ntorso a a a a a\n")
    with pytest.raises(TopologyError):
        parse_topology("keypoint pelvis\nwhatnot pelvis\n")
    with pytest.raises(TopologyError):
        parse_topology("keypoint pelvis\nkeypoint a\nbone pelvis a 50\n")  # no head/torso


def test_config_parse():
    cfg = parse_config("# comment\ntcn.embed_dim = 64\niso.sigma=1.5\nocc.strides = 1,2,3\nflag = true\n")
    assert cfg_get(cfg, "tcn.embed_dim", cast=int) == 64
    assert cfg_get(cfg, "iso.sigma", cast=float) == 1.5
    assert cfg_ints(cfg, "occ.strides", (1,)) == (1, 2, 3)
    assert cfg_floats(cfg, "missing", (0.5,)) == (0.5,)
    assert cfg_get(cfg, "flag", cast=bool) is True
    assert cfg_get(cfg, "absent", default=7, cast=int) == 7


def test_config_errors():
    with pytest.raises(ConfigError):
        parse_config("just a line\n")
    cfg = parse_config("x = notanint\n")
    with pytest.raises(ConfigError):
        cfg_get(cfg, "x", cast=int)


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"w": np.arange(6.0).reshape(2, 3), "b": np.zeros(3)}
    meta = {"kind": "tcn", "embed_dim": 8, "strides": [1, 2]}
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, arrays, meta)
    back_arrays, back_meta = load_checkpoint(path)
    assert back_meta == meta
    assert set(back_arrays) == {"w", "b"}
    assert np.array_equal(back_arrays["w"], arrays["w"])


def test_checkpoint_reserved_name(tmp_path):
    with pytest.raises(InvalidInputError):
        save_checkpoint(tmp_path / "x.npz", {"__meta__": np.zeros(1)}, {})
