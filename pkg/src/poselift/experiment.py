"""End-to-end pipeline: synthesize, train, lift, refine, evaluate, manifest."""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .augment import OcclusionConfig, apply_occlusions
from .discriminator import KcsEnergyModel
from .errors import ConfigError, InvalidInputError
from .iso import IsoConfig, refine
from .metrics import evaluate, mpjpe
from .pose_io import default_topology, read_pose2d, read_pose3d, write_pose2d, write_pose3d
from .skeleton import PoseSequence3D
from .synth import SyntheticMotionConfig, SyntheticSequence, ViewData, generate
from .tcn import LossWeights, TcnConfig, TcnModel, TrainConfig, train

STAGES = ("synth", "scorer", "train", "infer", "refine", "eval")


def _default_train_synth():
    return SyntheticMotionConfig(n_sequences=4, frames=120, seed=1000,
                                 speed_multipliers=(1.0, 1.6),
                                 view_rotations=((0.0, 1.5707963267948966, 0.0),),
                                 mask_occluded_prob=0.0)


def _default_eval_synth():
    return SyntheticMotionConfig(n_sequences=3, frames=96, seed=2000,
                                 speed_multipliers=(1.0, 1.6),
                                 mask_occluded_prob=0.9)


def _default_tcn():
    return TcnConfig(embed_dim=64, window_len=16, strides=(1, 2, 3),
                     channels=32, branch_layers=2)


@dataclass
class ExperimentConfig:
    out_dir: str = "out"
    seed: int = 0
    epochs: int = 6
    train_synth: SyntheticMotionConfig = field(default_factory=_default_train_synth)
    eval_synth: SyntheticMotionConfig = field(default_factory=_default_eval_synth)
    tcn: TcnConfig = field(default_factory=_default_tcn)
    train: TrainConfig = field(default_factory=TrainConfig)
    occlusion: Optional[OcclusionConfig] = None   # None = train on raw detections
    aug_copies: int = 1                           # occluded copies added per sequence
    eval_occlusion: Optional[OcclusionConfig] = None  # extra corruption of eval detections
    iso: Optional[IsoConfig] = None               # None = report raw lifts only
    data_dir: Optional[str] = None                # read eval pairs instead of synthesizing
    scorer_window: int = 16
    scorer_interval: int = 1
    scorer_reg: float = 1e-3

    def validate(self):
        if not self.out_dir:
            raise ConfigError("out_dir must be set")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.aug_copies < 1:
            raise ConfigError("aug_copies must be >= 1")
        if self.scorer_window < self.scorer_interval + 1:
            raise ConfigError("scorer_window must exceed scorer_interval")
        if self.scorer_reg <= 0:
            raise ConfigError("scorer_reg must be > 0")
        self.train_synth.validate()
        self.eval_synth.validate()
        self.train.validate()
        if self.data_dir is not None and not Path(self.data_dir).is_dir():
            raise ConfigError(f"data_dir {self.data_dir!r} does not exist")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json_dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _occluded_copy(seq: SyntheticSequence, occ: OcclusionConfig, topo, rng) -> SyntheticSequence:
    views = [ViewData(v.rotation, v.pose3d, apply_occlusions(v.det2d, occ, topo, rng),
                      v.visible) for v in seq.views]
    return SyntheticSequence(seq.pose3d, views, seq.action)


def _read_eval_pairs(data_dir: Path, topo) -> list:
    pairs = []
    for gt_path in sorted(data_dir.glob("*_gt.pose3d")):
        det_path = gt_path.with_name(gt_path.name.replace("_gt.pose3d", "_det.pose2d"))
        if not det_path.exists():
            raise InvalidInputError(f"no detections for {gt_path.name}")
        pairs.append((read_pose3d(gt_path, topo), read_pose2d(det_path, topo)))
    if not pairs:
        raise InvalidInputError(f"no *_gt.pose3d files under {data_dir}")
    return pairs


def run_experiment(cfg: ExperimentConfig, topo=None) -> dict:
    """All stages in order; writes artifacts + manifest.json under cfg.out_dir.

    Every produced file lands in the manifest with its content digest. A stage
    failure still writes the manifest, with the failure recorded, before the
    exception propagates.
    """
    cfg.validate()
    if topo is None:
        topo = default_topology()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_echo = asdict(cfg)
    config_echo["out_dir"] = "."       # keep manifests path-independent
    manifest = {"config": config_echo, "stages": {}, "failure": None, "files": {}}
    state = {}

    def stage_synth():
        state["train_seqs"] = generate(cfg.train_synth, topo)
        if cfg.data_dir is not None:
            pairs = _read_eval_pairs(Path(cfg.data_dir), topo)
        else:
            eval_seqs = generate(cfg.eval_synth, topo)
            pairs = [(s.views[0].pose3d, s.views[0].det2d) for s in eval_seqs]
        if cfg.eval_occlusion is not None:
            # corrupt held-out detections identically across runs: the eval
            # stream depends only on the eval occlusion seed, never cfg.seed
            rng = np.random.default_rng(cfg.eval_occlusion.seed)
            pairs = [(gt, apply_occlusions(det, cfg.eval_occlusion, topo, rng))
                     for gt, det in pairs]
        state["eval_pairs"] = pairs
        for i, (gt, det) in enumerate(pairs):
            write_pose3d(out / f"eval{i:02d}_gt.pose3d", gt, topo)
            write_pose2d(out / f"eval{i:02d}_det.pose2d", det, topo)
        return "ok"

    def stage_scorer():
        if cfg.train.weights.w3 <= 0 and not (cfg.iso is not None and cfg.iso.lambda1 > 0):
            return "skipped (no realness term in training or refinement)"
        w = cfg.scorer_window
        windows = []
        for seq in state["train_seqs"]:
            frames = seq.pose3d.frames
            windows.extend(frames[j: j + w] for j in range(0, frames.shape[0] - w + 1, w))
        scorer = KcsEnergyModel.fit(windows, topo, interval=cfg.scorer_interval,
                                    reg_scale=cfg.scorer_reg)
        scorer.save(out / "scorer.ckpt")
        state["scorer"] = scorer
        return "ok"

    def stage_train():
        model = TcnModel(cfg.tcn, seed=cfg.seed)
        if cfg.epochs > 0:
            train_seqs = state["train_seqs"]
            if cfg.occlusion is not None:
                # keep the clean originals and add independently drawn
                # occluded copies, so masks vary across the epoch stream
                rng = np.random.default_rng(cfg.seed + 7919)
                train_seqs = list(train_seqs) + [
                    _occluded_copy(s, cfg.occlusion, topo, rng)
                    for _ in range(cfg.aug_copies) for s in state["train_seqs"]]
            tcfg = TrainConfig(**{**asdict(cfg.train),
                                  "weights": cfg.train.weights, "seed": cfg.seed})
            history = train(model, train_seqs, tcfg, epochs=cfg.epochs,
                            scorer=state.get("scorer") if cfg.train.weights.w3 > 0 else None)
            _json_dump(out / "history.json", history)
        model.save(out / "model.ckpt")
        state["model"] = model
        return "ok"

    def stage_infer():
        preds = []
        for i, (gt, det) in enumerate(state["eval_pairs"]):
            pred = state["model"].predict_sequence(det)
            write_pose3d(out / f"eval{i:02d}_raw.pose3d", pred, topo)
            preds.append(pred)
        state["raw_preds"] = preds
        return "ok"

    def stage_refine():
        if cfg.iso is None:
            return "skipped (no refinement configured)"
        refined = []
        for i, (gt, det) in enumerate(state["eval_pairs"]):
            scorer = state.get("scorer") if cfg.iso.lambda1 > 0 else None
            pose, trace = refine(state["raw_preds"][i], det, scorer, cfg.iso, gt3d=gt)
            write_pose3d(out / f"eval{i:02d}_iso.pose3d", pose, topo)
            _json_dump(out / f"eval{i:02d}_trace.json", trace)
            refined.append(pose)
        state["refined_preds"] = refined
        return "ok"

    def stage_eval():
        gts = [gt for gt, _ in state["eval_pairs"]]
        pooled_gt = PoseSequence3D(
            np.concatenate([g.frames for g in gts]),
            actions=sum((g.actions if g.actions is not None else ["?"] * g.T
                         for g in gts), []))

        def pooled_report(preds):
            return evaluate(np.concatenate([p.frames for p in preds]), pooled_gt, topo)

        final = state.get("refined_preds", state["raw_preds"])
        raw_rep = pooled_report(state["raw_preds"])
        report = {"raw": raw_rep.as_dict(), "refined": None,
                  "final_mpjpe_mm": raw_rep.mpjpe_mm}
        text = ["raw lifts", raw_rep.format_text()]
        if "refined_preds" in state:
            iso_rep = pooled_report(state["refined_preds"])
            report["refined"] = iso_rep.as_dict()
            report["final_mpjpe_mm"] = iso_rep.mpjpe_mm
            text += ["", "refined lifts", iso_rep.format_text()]
        report["per_sequence_mpjpe_mm"] = [
            mpjpe(p, g) for p, g in zip(final, gts)]
        _json_dump(out / "report.json", report)
        (out / "report.txt").write_text("\n".join(text) + "\n")
        state["report"] = report
        return "ok"

    runners = {"synth": stage_synth, "scorer": stage_scorer, "train": stage_train,
               "infer": stage_infer, "refine": stage_refine, "eval": stage_eval}
    try:
        for name in STAGES:
            manifest["stages"][name] = runners[name]()
    except Exception as e:
        manifest["failure"] = {"stage": name, "error": f"{type(e).__name__}: {e}"}
        _write_manifest(out, manifest)
        raise
    _write_manifest(out, manifest)
    return manifest


def _write_manifest(out: Path, manifest: dict) -> None:
    files = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files[str(path.relative_to(out))] = _sha256(path)
    manifest["files"] = files
    _json_dump(out / "manifest.json", manifest)


# ------------------------------------------------------------------ ladder
#
# One rung per added component; every rung trains on the same synthetic data
# and is scored on the same held-out detections, so rows differ only in the
# component under test.


def ladder_train_occlusion() -> OcclusionConfig:
    # frequent fully-masked frames and short whole-frame blocks; runs stay
    # well inside the model window so masked frames remain bridgeable
    return OcclusionConfig(p1=0.05, p2=0.10, p3=0.06, l=8,
                           frame_block_prob=0.6, shift_prob=0.0, swap_prob=0.0)


def ladder_eval_occlusion() -> OcclusionConfig:
    return OcclusionConfig(p1=0.04, p2=0.15, p3=0.08, l=8,
                           frame_block_prob=1.0, shift_prob=0.0,
                           swap_prob=0.0, seed=97)


def ladder_rungs() -> list:
    base_tcn = dict(embed_dim=64, window_len=20, channels=32, branch_layers=2)
    rungs = []

    def rung(name, strides=(1,), use_embedding=False, w1=0.0, w3=0.0,
             occlusion=False, iso=False):
        rungs.append({
            "name": name,
            "tcn": TcnConfig(strides=strides, use_embedding=use_embedding, **base_tcn),
            "weights": LossWeights(w1=w1, w2=0.0, w3=w3),
            "occlusion": ladder_train_occlusion() if occlusion else None,
            "iso": IsoConfig(weight_mode="soft", sigma=1.0, lambda1=0.01,
                             lambda2=0.05, iterations=120, step_size=0.5) if iso else None,
        })

    rung("base")
    rung("+embedding", use_embedding=True)
    rung("+multi-stride", use_embedding=True, strides=(1, 2, 3))
    rung("+multi-view", use_embedding=True, strides=(1, 2, 3), w1=0.5)
    rung("+tkcs", use_embedding=True, strides=(1, 2, 3), w1=0.5, w3=0.01)
    rung("+occlusion-aug", use_embedding=True, strides=(1, 2, 3), w1=0.5, w3=0.01,
         occlusion=True)
    rung("+iso", use_embedding=True, strides=(1, 2, 3), w1=0.5, w3=0.01,
         occlusion=True, iso=True)
    return rungs


def ladder_experiment(out_dir, seeds=(0, 1, 2), epochs=6,
                      train_cfg: Optional[TrainConfig] = None, topo=None) -> dict:
    """Train every rung at each seed; returns the mean/sem table, writes it too."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rung in ladder_rungs():
        per_seed = []
        for seed in seeds:
            base = train_cfg if train_cfg is not None else TrainConfig(
                steps_per_epoch=60, batch_size=8)
            cfg = ExperimentConfig(
                out_dir=str(out / rung["name"].replace("+", "plus-") / f"seed{seed}"),
                seed=seed, epochs=epochs,
                tcn=rung["tcn"],
                train=TrainConfig(**{**asdict(base), "weights": rung["weights"],
                                     "seed": seed}),
                occlusion=rung["occlusion"],
                eval_occlusion=ladder_eval_occlusion(),
                iso=rung["iso"])
            run_experiment(cfg, topo)
            report = json.loads((Path(cfg.out_dir) / "report.json").read_text())
            per_seed.append(report["final_mpjpe_mm"])
        mean = float(np.mean(per_seed))
        sem = float(np.std(per_seed, ddof=1) / np.sqrt(len(per_seed))) \
            if len(per_seed) > 1 else 0.0
        rows.append({"name": rung["name"], "per_seed": per_seed,
                     "mean_mpjpe_mm": mean, "sem_mm": sem})
    table = {"seeds": list(seeds), "rows": rows}
    _json_dump(out / "ladder.json", table)
    lines = [f"{'config':<16} {'mean_mpjpe':>11} {'sem':>7}  per-seed"]
    for r in rows:
        per = " ".join(f"{v:.2f}" for v in r["per_seed"])
        lines.append(f"{r['name']:<16} {r['mean_mpjpe_mm']:>11.2f} {r['sem_mm']:>7.2f}  {per}")
    (out / "ladder.txt").write_text("\n".join(lines) + "\n")
    return table
