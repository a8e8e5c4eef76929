"""Batch command line: every stage of the pipeline as a subcommand.

All subcommands take --config (flat `key = value` file), --seed (overrides the
config seed), and --out (output directory). Exit code 0 on success; any error
prints a diagnostic to stderr and exits nonzero.
"""

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .augment import OcclusionConfig, apply_occlusions
from .discriminator import (DiscConfig, DiscriminatorModel, KcsEnergyModel,
                            train_adversarial)
from .errors import PoseliftError
from .experiment import ExperimentConfig, run_experiment
from .iso import CalibratedConfidence, IsoConfig, refine
from .kcs import discriminator_features
from .metrics import evaluate
from .pose_io import (cfg_get, default_topology, read_config, read_pose2d,
                      read_pose3d, read_topology, write_pose2d, write_pose3d)
from .synth import SyntheticMotionConfig, generate
from .tcn import LossWeights, TcnConfig, TcnModel, TrainConfig, train
from .visibility import sequence_visibility

# modules differ in whether annotations are live types or strings
_CASTS = {int: int, float: float, bool: bool, str: str,
          "int": int, "float": float, "bool": bool, "str": str}


def _fill(cls, cfg: dict, prefix: str, **overrides):
    """Dataclass from config keys `<prefix>.<field>`; absent keys keep defaults."""
    kwargs = {}
    for f in fields(cls):
        key = f"{prefix}.{f.name}"
        if key not in cfg:
            continue
        if f.type in _CASTS:
            kwargs[f.name] = cfg_get(cfg, key, cast=_CASTS[f.type])
        elif f.type is tuple or f.type == "tuple":
            kwargs[f.name] = tuple(float(v) for v in cfg[key].split(",") if v.strip())
    kwargs.update(overrides)
    return cls(**kwargs)


def _topo(cfg: dict):
    path = cfg_get(cfg, "topology")
    return read_topology(path) if path else default_topology()


def _seeded(cfg: dict, args) -> int:
    if args.seed is not None:
        return args.seed
    return cfg_get(cfg, "seed", default=0, cast=int)


def _synth_config(cfg: dict, seed: int, prefix="synth") -> SyntheticMotionConfig:
    sc = _fill(SyntheticMotionConfig, cfg, prefix, seed=seed)
    raw = cfg_get(cfg, f"{prefix}.view_rotations")
    if raw:
        views = []
        for triple in raw.split(","):
            views.append(tuple(float(v) for v in triple.split(":")))
        sc.view_rotations = tuple(views)
    return sc


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    weights = LossWeights(w1=cfg_get(cfg, "train.w1", 0.5, float),
                          w2=cfg_get(cfg, "train.w2", 0.1, float),
                          w3=cfg_get(cfg, "train.w3", 0.01, float))
    return _fill(TrainConfig, cfg, "train", seed=seed, weights=weights)


def _iso_config(cfg: dict) -> IsoConfig:
    cal = None
    if "iso.cal_temperature" in cfg or "iso.cal_bias" in cfg:
        cal = CalibratedConfidence(cfg_get(cfg, "iso.cal_temperature", 1.0, float),
                                   cfg_get(cfg, "iso.cal_bias", 0.0, float))
    return _fill(IsoConfig, cfg, "iso", calibration=cal)


def _require(cfg: dict, key: str) -> str:
    if key not in cfg:
        raise PoseliftError(f"config key {key!r} is required")
    return cfg[key]


def _real_windows(cfg: dict, topo, seed: int, window: int):
    sc = _synth_config(cfg, seed)
    windows = []
    for seq in generate(sc, topo):
        frames = seq.pose3d.frames
        windows.extend(frames[j: j + window]
                       for j in range(0, frames.shape[0] - window + 1, window))
    return windows


# ------------------------------------------------------------- subcommands


def cmd_synth_gen(cfg, args, out: Path) -> None:
    topo = _topo(cfg)
    seqs = generate(_synth_config(cfg, _seeded(cfg, args)), topo)
    for i, seq in enumerate(seqs):
        for v, view in enumerate(seq.views):
            write_pose3d(out / f"seq{i:02d}_v{v}_gt.pose3d", view.pose3d, topo)
            write_pose2d(out / f"seq{i:02d}_v{v}_det.pose2d", view.det2d, topo)
            np.savetxt(out / f"seq{i:02d}_v{v}_vis.txt",
                       view.visible.astype(int), fmt="%d")
    print(f"wrote {len(seqs)} sequences under {out}")


def cmd_visibility(cfg, args, out: Path) -> None:
    topo = _topo(cfg)
    pose = read_pose3d(_require(cfg, "pose3d"), topo)
    vis = sequence_visibility(pose, topo)
    np.savetxt(out / "visibility.txt", vis.astype(int), fmt="%d")
    print(f"visible fraction {vis.mean():.4f}; wrote {out / 'visibility.txt'}")


def cmd_augment(cfg, args, out: Path) -> None:
    topo = _topo(cfg)
    det = read_pose2d(_require(cfg, "pose2d"), topo)
    occ = _fill(OcclusionConfig, cfg, "occ", seed=_seeded(cfg, args))
    aug = apply_occlusions(det, occ, topo)
    write_pose2d(out / "augmented.pose2d", aug, topo)
    print(f"masked fraction {aug.mask.mean():.4f}; wrote {out / 'augmented.pose2d'}")


def cmd_features(cfg, args, out: Path) -> None:
    topo = _topo(cfg)
    pose = read_pose3d(_require(cfg, "pose3d"), topo)
    interval = cfg_get(cfg, "interval", 1, int)
    feats = discriminator_features(pose, topo, interval)
    np.savetxt(out / "features.txt", feats, fmt="%.9g")
    print(f"wrote {feats.shape[0]} x {feats.shape[1]} features to {out / 'features.txt'}")


def cmd_train(cfg, args, out: Path) -> None:
    topo = _topo(cfg)
    seed = _seeded(cfg, args)
    tcn_cfg = _fill(TcnConfig, cfg, "tcn")
    train_cfg = _train_config(cfg, seed)
    seqs = generate(_synth_config(cfg, seed), topo)
    if "occ.p1" in cfg or cfg_get(cfg, "augment", False, bool):
        occ = _fill(OcclusionConfig, cfg, "occ", seed=seed)
        rng = np.random.default_rng(seed + 7919)
        for seq in seqs:
            for view in seq.views:
                view.det2d = apply_occlusions(view.det2d, occ, topo, rng)
    scorer = None
    if train_cfg.weights.w3 > 0:
        scorer = KcsEnergyModel.fit(
            _real_windows(cfg, topo, seed, cfg_get(cfg, "scorer_window", 16, int)),
            topo, interval=cfg_get(cfg, "scorer_interval", 1, int))
        scorer.save(out / "scorer.ckpt")
    model = TcnModel(tcn_cfg, seed=seed)
    history = train(model, seqs, train_cfg,
                    epochs=cfg_get(cfg, "epochs", 1, int), scorer=scorer)
    model.save(out / "model.ckpt")
    (out / "history.json").write_text(json.dumps(history, sort_keys=True, indent=1) + "\n")
    print(f"final loss {history[-1]['loss']:.3f}; wrote {out / 'model.ckpt'}.npz")


def cmd_disc_train(cfg, args, out: Path) -> None:
    topo = _topo(cfg)
    seed = _seeded(cfg, args)
    window = cfg_get(cfg, "scorer_window", 16, int)
    real = _real_windows(cfg, topo, seed, window)
    # stand-in fakes: real windows under coordinate noise strong enough to
    # break bone-length constancy
    rng = np.random.default_rng(seed + 104729)
    noise_mm = cfg_get(cfg, "fake_noise_mm", 120.0, float)
    fakes = [w + rng.normal(0, noise_mm, w.shape) for w in real]
    disc_cfg = _fill(DiscConfig, cfg, "disc")
    disc = DiscriminatorModel(disc_cfg, topo, seed=seed)
    history = train_adversarial(disc, fakes, real,
                                steps=cfg_get(cfg, "steps", 100, int),
                                lr=cfg_get(cfg, "lr", 0.05, float),
                                seed=seed)
    disc.save(out / "disc.ckpt")
    energy = KcsEnergyModel.fit(real, topo,
                                interval=cfg_get(cfg, "scorer_interval", 1, int))
    energy.save(out / "scorer.ckpt")
    (out / "disc_history.json").write_text(
        json.dumps(history, sort_keys=True, indent=1) + "\n")
    print(f"final adversarial loss {history[-1]:.4f}; "
          f"wrote {out / 'disc.ckpt'}.npz and {out / 'scorer.ckpt'}.npz")


def cmd_infer(cfg, args, out: Path) -> None:
    topo = _topo(cfg)
    model = TcnModel.load(_require(cfg, "model"))
    det = read_pose2d(_require(cfg, "det2d"), topo)
    pred = model.predict_sequence(det)
    write_pose3d(out / "pred.pose3d", pred, topo)
    print(f"lifted {pred.T} frames; wrote {out / 'pred.pose3d'}")


def cmd_iso_refine(cfg, args, out: Path) -> None:
    topo = _topo(cfg)
    pose = read_pose3d(_require(cfg, "pose3d"), topo)
    det = read_pose2d(_require(cfg, "det2d"), topo)
    gt = read_pose3d(cfg["gt3d"], topo) if "gt3d" in cfg else None
    scorer = KcsEnergyModel.load(cfg["scorer"]) if "scorer" in cfg else None
    iso_cfg = _iso_config(cfg)
    refined, trace = refine(pose, det, scorer, iso_cfg, gt3d=gt)
    write_pose3d(out / "refined.pose3d", refined, topo)
    (out / "trace.json").write_text(json.dumps(trace, sort_keys=True, indent=1) + "\n")
    last = trace[-1] if trace else {}
    tail = f", final mpjpe {last['mpjpe']:.2f} mm" if "mpjpe" in last else ""
    print(f"refined {refined.T} frames over {len(trace)} iterations{tail}; "
          f"wrote {out / 'refined.pose3d'}")


def cmd_eval(cfg, args, out: Path) -> None:
    topo = _topo(cfg)
    gt = read_pose3d(_require(cfg, "gt3d"), topo)
    pred = read_pose3d(_require(cfg, "pred3d"), topo)
    report = evaluate(pred, gt, topo)
    (out / "report.txt").write_text(report.format_text() + "\n")
    (out / "report.json").write_text(
        json.dumps(report.as_dict(), sort_keys=True, indent=1) + "\n")
    print(report.format_text())


def cmd_run_experiment(cfg, args, out: Path) -> None:
    seed = _seeded(cfg, args)
    exp = ExperimentConfig(
        out_dir=str(out), seed=seed,
        epochs=cfg_get(cfg, "epochs", 6, int),
        train_synth=_synth_config(cfg, cfg_get(cfg, "synth.seed", 1000, int), "synth")
        if any(k.startswith("synth.") for k in cfg) else ExperimentConfig().train_synth,
        eval_synth=_synth_config(cfg, cfg_get(cfg, "eval_synth.seed", 2000, int),
                                 "eval_synth")
        if any(k.startswith("eval_synth.") for k in cfg) else ExperimentConfig().eval_synth,
        tcn=_fill(TcnConfig, cfg, "tcn") if any(k.startswith("tcn.") for k in cfg)
        else ExperimentConfig().tcn,
        train=_train_config(cfg, seed),
        occlusion=_fill(OcclusionConfig, cfg, "occ", seed=seed)
        if any(k.startswith("occ.") for k in cfg) else None,
        iso=_iso_config(cfg) if any(k.startswith("iso.") for k in cfg) else None,
        data_dir=cfg_get(cfg, "data_dir"))
    manifest = run_experiment(exp)
    report = json.loads((out / "report.json").read_text())
    print(f"stages: {', '.join(f'{k}={v}' for k, v in manifest['stages'].items())}")
    print(f"final mpjpe {report['final_mpjpe_mm']:.2f} mm; manifest at "
          f"{out / 'manifest.json'}")


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "visibility": cmd_visibility,
    "augment": cmd_augment,
    "features": cmd_features,
    "train": cmd_train,
    "disc-train": cmd_disc_train,
    "infer": cmd_infer,
    "iso-refine": cmd_iso_refine,
    "eval": cmd_eval,
    "run-experiment": cmd_run_experiment,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="poselift",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out")
    args = parser.parse_args(argv)
    try:
        cfg = read_config(args.config) if args.config else {}
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args, out)
        return 0
    except (PoseliftError, OSError, KeyError, ValueError) as e:
        print(f"poselift {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
