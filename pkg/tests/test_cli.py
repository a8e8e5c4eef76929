"""Command-line round trips."""

import json

import numpy as np
import pytest

from poselift.cli import main
from poselift.kcs import discriminator_features
from poselift.pose_io import default_topology, read_pose2d, read_pose3d
from poselift.skeleton import project_to_crop
from poselift.synth import SyntheticMotionConfig, generate
from poselift.visibility import sequence_visibility

TOPO = default_topology()


def write_cfg(path, **keys):
    path.write_text("".join(f"{k} = {v}\n" for k, v in keys.items()))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_gen_writes_exact_projection_when_noiseless(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", **{
        "synth.n_sequences": 1, "synth.frames": 12, "synth.noise_px": 0.0,
        "synth.mask_occluded_prob": 0.0})
    out = tmp_path / "synth"
    assert run("synth-gen", "--config", cfg, "--seed", 5, "--out", out) == 0
    gt = read_pose3d(out / "seq00_v0_gt.pose3d", TOPO)
    det = read_pose2d(out / "seq00_v0_det.pose2d", TOPO)
    clean = project_to_crop(gt, det.scale_mm)
    np.testing.assert_allclose(det.frames, clean.frames, atol=1e-7)
    vis = np.loadtxt(out / "seq00_v0_vis.txt", dtype=int)
    assert vis.shape == (12, TOPO.K)


def test_synth_gen_seed_flag_overrides_config(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", **{
        "seed": 1, "synth.n_sequences": 1, "synth.frames": 8})
    out_a, out_b, out_c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    run("synth-gen", "--config", cfg, "--out", out_a)
    run("synth-gen", "--config", cfg, "--seed", 9, "--out", out_b)
    run("synth-gen", "--config", cfg, "--seed", 1, "--out", out_c)
    a = (out_a / "seq00_v0_gt.pose3d").read_text()
    assert a != (out_b / "seq00_v0_gt.pose3d").read_text()
    assert a == (out_c / "seq00_v0_gt.pose3d").read_text()


@pytest.fixture(scope="module")
def sample_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("sample")
    seq = generate(SyntheticMotionConfig(n_sequences=1, frames=30, seed=3), TOPO)[0]
    main(["synth-gen", "--config",
          write_cfg(root / "s.cfg", **{"synth.n_sequences": 1, "synth.frames": 30,
                                       "seed": 3}),
          "--out", str(root)])
    return root


def test_visibility_matches_library(sample_files, tmp_path):
    cfg = write_cfg(tmp_path / "v.cfg",
                    pose3d=sample_files / "seq00_v0_gt.pose3d")
    out = tmp_path / "vis"
    assert run("visibility", "--config", cfg, "--out", out) == 0
    got = np.loadtxt(out / "visibility.txt", dtype=int).astype(bool)
    pose = read_pose3d(sample_files / "seq00_v0_gt.pose3d", TOPO)
    np.testing.assert_array_equal(got, sequence_visibility(pose, TOPO))


def test_augment_masks_and_zeroes(sample_files, tmp_path):
    cfg = write_cfg(tmp_path / "a.cfg", **{
        "pose2d": sample_files / "seq00_v0_det.pose2d",
        "occ.p1": 0.3, "occ.p2": 0.0, "occ.p3": 0.0,
        "occ.frame_block_prob": 0.0, "occ.shift_prob": 0.0, "occ.swap_prob": 0.0})
    out = tmp_path / "aug"
    assert run("augment", "--config", cfg, "--seed", 2, "--out", out) == 0
    aug = read_pose2d(out / "augmented.pose2d", TOPO)
    before = read_pose2d(sample_files / "seq00_v0_det.pose2d", TOPO)
    assert aug.mask.sum() > before.mask.sum()
    assert np.all(aug.confidence[aug.mask] == 0.0)
    assert np.all(aug.frames[aug.mask] == 0.0)


def test_features_matches_library(sample_files, tmp_path):
    cfg = write_cfg(tmp_path / "f.cfg",
                    pose3d=sample_files / "seq00_v0_gt.pose3d", interval=2)
    out = tmp_path / "feat"
    assert run("features", "--config", cfg, "--out", out) == 0
    got = np.loadtxt(out / "features.txt")
    pose = read_pose3d(sample_files / "seq00_v0_gt.pose3d", TOPO)
    want = discriminator_features(pose, TOPO, 2)
    assert got.shape == want.shape == (30, TOPO.M * (TOPO.M + 1) + 3 * TOPO.K)
    np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-6)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    cfg = write_cfg(root / "t.cfg", **{
        "synth.n_sequences": 2, "synth.frames": 40, "synth.seed": 11,
        "tcn.embed_dim": 8, "tcn.window_len": 8, "tcn.strides": "1",
        "tcn.channels": 8, "tcn.branch_layers": 1,
        "train.steps_per_epoch": 4, "train.batch_size": 2,
        "train.w1": 0.0, "train.w2": 0.0, "train.w3": 0.01,
        "scorer_window": 8, "epochs": 1})
    assert main(["train", "--config", cfg, "--seed", "0", "--out", str(root)]) == 0
    return root


def test_train_outputs(trained):
    assert (trained / "model.ckpt.npz").exists()
    assert (trained / "scorer.ckpt.npz").exists()
    history = json.loads((trained / "history.json").read_text())
    assert len(history) == 1 and np.isfinite(history[0]["loss"])


def test_infer_and_iso_refine_and_eval(trained, sample_files, tmp_path):
    det = sample_files / "seq00_v0_det.pose2d"
    gt = sample_files / "seq00_v0_gt.pose3d"
    out_i = tmp_path / "infer"
    cfg = write_cfg(tmp_path / "i.cfg", model=trained / "model.ckpt.npz", det2d=det)
    assert run("infer", "--config", cfg, "--out", out_i) == 0
    pred = read_pose3d(out_i / "pred.pose3d", TOPO)
    assert pred.T == 30 and np.all(np.isfinite(pred.frames))

    out_r = tmp_path / "refine"
    # the barely trained lifter collapses toward tiny poses, so the fitted
    # projection scale is huge; both the realness weight and the step must
    # shrink for the refinement to run its full budget
    cfg = write_cfg(tmp_path / "r.cfg", **{
        "pose3d": out_i / "pred.pose3d", "det2d": det, "gt3d": gt,
        "scorer": trained / "scorer.ckpt.npz",
        "iso.weight_mode": "soft", "iso.iterations": 8, "iso.lambda1": 1e-8,
        "iso.step_size": 0.01})
    assert run("iso-refine", "--config", cfg, "--out", out_r) == 0
    trace = json.loads((out_r / "trace.json").read_text())
    assert len(trace) == 8
    assert {"iteration", "loss", "rep", "gen", "smooth", "mpjpe"} <= set(trace[0])

    # without gt3d the trace has no error column
    cfg = write_cfg(tmp_path / "r2.cfg", **{
        "pose3d": out_i / "pred.pose3d", "det2d": det,
        "iso.weight_mode": "constant", "iso.iterations": 2, "iso.lambda1": 0.0})
    out_r2 = tmp_path / "refine2"
    assert run("iso-refine", "--config", cfg, "--out", out_r2) == 0
    trace = json.loads((out_r2 / "trace.json").read_text())
    assert "mpjpe" not in trace[0]

    out_e = tmp_path / "eval"
    cfg = write_cfg(tmp_path / "e.cfg", gt3d=gt,
                    pred3d=out_r / "refined.pose3d")
    assert run("eval", "--config", cfg, "--out", out_e) == 0
    report = json.loads((out_e / "report.json").read_text())
    assert report["mpjpe_mm"] >= report["p_mpjpe_mm"] >= 0
    assert "mpjpe_mm" in (out_e / "report.txt").read_text()


def test_eval_of_identical_poses(sample_files, tmp_path):
    gt = sample_files / "seq00_v0_gt.pose3d"
    cfg = write_cfg(tmp_path / "e.cfg", gt3d=gt, pred3d=gt)
    out = tmp_path / "eval0"
    assert run("eval", "--config", cfg, "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["mpjpe_mm"] == 0.0 and report["pck150"] == 1.0


def test_disc_train_outputs(tmp_path):
    cfg = write_cfg(tmp_path / "d.cfg", **{
        "synth.n_sequences": 2, "synth.frames": 32, "synth.seed": 4,
        "scorer_window": 8, "steps": 3,
        "disc.channels": 8, "disc.layers": 1})
    out = tmp_path / "disc"
    assert run("disc-train", "--config", cfg, "--seed", 1, "--out", out) == 0
    assert (out / "disc.ckpt.npz").exists()
    assert (out / "scorer.ckpt.npz").exists()
    history = json.loads((out / "disc_history.json").read_text())
    assert len(history) == 3


def test_run_experiment_subcommand(tmp_path):
    cfg = write_cfg(tmp_path / "x.cfg", **{
        "synth.n_sequences": 2, "synth.frames": 40, "synth.seed": 50,
        "synth.mask_occluded_prob": 0.0,
        "eval_synth.n_sequences": 1, "eval_synth.frames": 40, "eval_synth.seed": 60,
        "tcn.embed_dim": 8, "tcn.window_len": 8, "tcn.strides": "1",
        "tcn.channels": 8, "tcn.branch_layers": 1,
        "train.steps_per_epoch": 3, "train.batch_size": 2,
        "train.w1": 0.0, "train.w2": 0.0, "train.w3": 0.0,
        "iso.iterations": 3, "iso.lambda1": 0.0, "epochs": 1,
        "scorer_window": 8})
    out = tmp_path / "exp"
    assert run("run-experiment", "--config", cfg, "--seed", 0, "--out", out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["failure"] is None
    assert "eval00_iso.pose3d" in manifest["files"]


def test_errors_exit_nonzero(tmp_path, capsys):
    # missing required config key
    cfg = write_cfg(tmp_path / "bad.cfg")
    assert run("visibility", "--config", cfg, "--out", tmp_path / "o1") == 2
    assert "pose3d" in capsys.readouterr().err
    # nonexistent input file
    cfg = write_cfg(tmp_path / "bad2.cfg", pose3d=tmp_path / "missing.pose3d")
    assert run("visibility", "--config", cfg, "--out", tmp_path / "o2") == 2
    assert capsys.readouterr().err
    # malformed config value
    cfg = write_cfg(tmp_path / "bad3.cfg", **{"synth.frames": "many"})
    assert run("synth-gen", "--config", cfg, "--out", tmp_path / "o3") == 2
    assert "synth.frames" in capsys.readouterr().err
    # unknown subcommand exits via argparse
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
