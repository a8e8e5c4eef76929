"""Multi-stride temporal convolutional network for 2D-to-3D pose lifting.

Each frame's detections (x, y, confidence, mask per keypoint) are embedded
by a shared dense layer; parallel branches run dilated temporal convolutions
at different strides over the embedding sequence; the center columns of all
branches are concatenated and fused to the center frame's root-relative
3D pose. Training combines 3D supervision, multi-view consistency, 2D
reprojection, and a rotated-window realness penalty from a plugged scorer.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import SGD, Tensor, parameter
from .errors import (ConfigError, InvalidInputError, InvalidWindowError,
                     TrainingDivergedError)
from .pose_io import load_checkpoint, save_checkpoint
from .skeleton import PoseSequence2D, PoseSequence3D, RotationAugment

ACTIVATIONS = {"tanh": Tensor.tanh, "relu": Tensor.relu}

# selection matrix: 3D mm -> 2D mm, drop z
_PROJECT = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the multi-view, 2D, and realness terms."""

    w1: float = 0.5
    w2: float = 0.1
    w3: float = 0.01

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w3 < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass(frozen=True)
class TcnConfig:
    n_keypoints: int = 17
    embed_dim: int = 512
    window_len: int = 64
    strides: tuple = (1, 2, 3, 5, 7)
    channels: int = 128
    kernel: int = 3
    branch_layers: int = 3
    tkcs_interval: int = 1
    use_embedding: bool = True
    activation: str = "tanh"
    # head outputs are multiplied by this, so trained weights stay O(1)
    # even though poses are hundreds of mm from the root
    output_scale_mm: float = 200.0

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if self.n_keypoints < 1:
            raise ConfigError("n_keypoints must be >= 1")
        if self.embed_dim < 1 or self.channels < 1 or self.branch_layers < 1:
            raise ConfigError("embed_dim, channels, branch_layers must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd and >= 1")
        if self.tkcs_interval < 1:
            raise ConfigError("tkcs_interval must be >= 1")
        if not self.strides:
            raise ConfigError("need at least one stride")
        if any(s < 1 for s in self.strides):
            raise ConfigError("strides must be >= 1")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ConfigError("strides must be strictly increasing")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.output_scale_mm <= 0:
            raise ConfigError("output_scale_mm must be > 0")
        if self.receptive_field(max(self.strides)) > self.window_len:
            raise ConfigError("window_len shorter than the widest branch's "
                              "receptive field")

    def receptive_field(self, stride: int) -> int:
        return 1 + self.branch_layers * (self.kernel - 1) * stride

    @property
    def input_dim(self) -> int:
        return 4 * self.n_keypoints

    @property
    def branch_input_dim(self) -> int:
        return self.embed_dim if self.use_embedding else self.input_dim


def frame_inputs(coords: np.ndarray, conf: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """T x 4K model input: [x block | y block | conf block | mask block].

    Coordinates are recentered so the crop center is 0. Masked keypoints
    contribute zeros in the first three blocks regardless of what the
    arrays store, so occluded coordinates can never leak in.
    """
    coords = np.asarray(coords, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if coords.ndim != 3 or coords.shape[2] != 2 or conf.shape != coords.shape[:2] \
            or mask.shape != coords.shape[:2]:
        raise InvalidInputError("frame inputs need (T,K,2) coords and (T,K) conf/mask")
    keep = ~mask
    return np.concatenate([(coords[:, :, 0] - 0.5) * keep, (coords[:, :, 1] - 0.5) * keep,
                           conf * keep, mask.astype(np.float64)], axis=1)


class TcnModel:
    """Embedding + per-stride dilated conv branches + linear fusion head."""

    def __init__(self, config: TcnConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self._params = {}

        def add(name, value):
            self._params[name] = value

        if config.use_embedding:
            add("embed.w", parameter((config.input_dim, config.embed_dim), rng))
            add("embed.b", parameter(np.zeros(config.embed_dim)))
        for bi in range(len(config.strides)):
            c_in = config.branch_input_dim
            for li in range(config.branch_layers):
                for tap in range(config.kernel):
                    add(f"branch{bi}.layer{li}.w{tap}",
                        parameter((c_in, config.channels), rng))
                add(f"branch{bi}.layer{li}.b", parameter(np.zeros(config.channels)))
                c_in = config.channels
        fused = len(config.strides) * config.channels
        # zero head: an untrained model predicts the all-zero pose
        add("head.w", parameter(np.zeros((fused, config.n_keypoints * 3))))
        add("head.b", parameter(np.zeros(config.n_keypoints * 3)))

    # ------------------------------------------------------------- params

    def parameters(self) -> list:
        return list(self._params.values())

    @property
    def param_count(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_arrays(self) -> dict:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, arrays: dict) -> None:
        missing = set(self._params) - set(arrays)
        if missing:
            raise InvalidInputError(f"checkpoint missing arrays: {sorted(missing)}")
        for name, p in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise InvalidInputError(
                    f"array {name!r} has shape {arr.shape}, expected {p.data.shape}")
            p.data = arr.copy()

    def save(self, path) -> None:
        save_checkpoint(path, self.state_arrays(),
                        {"kind": "tcn", "config": asdict(self.config)})

    @classmethod
    def load(cls, path) -> "TcnModel":
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "tcn":
            raise InvalidInputError(f"not a model checkpoint: kind={meta.get('kind')!r}")
        cfg = TcnConfig(**meta["config"])
        model = cls(cfg)
        model.load_state(arrays)
        return model

    # ------------------------------------------------------------- forward

    def embed_frames(self, coords, conf, mask) -> Tensor:
        """Per-frame representations r_t, shape T x branch_input_dim."""
        m = frame_inputs(coords, conf, mask)
        if m.shape[1] != self.config.input_dim:
            raise InvalidInputError(
                f"expected {self.config.n_keypoints} keypoints, got {m.shape[1] // 4}")
        if not self.config.use_embedding:
            return Tensor(m)
        act = ACTIVATIONS[self.config.activation]
        return act(Tensor(m) @ self._params["embed.w"] + self._params["embed.b"])

    def forward(self, embeddings) -> Tensor:
        """Center-frame root-relative pose (K x 3) from a full window."""
        cfg = self.config
        r = embeddings if isinstance(embeddings, Tensor) else Tensor(embeddings)
        if r.ndim != 2 or r.shape[0] != cfg.window_len:
            raise InvalidWindowError(
                f"expected window of {cfg.window_len} frames, got shape {r.shape}")
        if r.shape[1] != cfg.branch_input_dim:
            raise InvalidInputError(f"embedding dim {r.shape[1]} does not match config")
        act = ACTIVATIONS[cfg.activation]
        cols = []
        for bi, s in enumerate(cfg.strides):
            x = r
            length = cfg.window_len
            for li in range(cfg.branch_layers):
                out_len = length - (cfg.kernel - 1) * s
                h = self._params[f"branch{bi}.layer{li}.b"]
                for tap in range(cfg.kernel):
                    piece = x[tap * s: tap * s + out_len]
                    h = h + piece @ self._params[f"branch{bi}.layer{li}.w{tap}"]
                x = act(h)
                length = out_len
            # kernel is odd so trimming is symmetric: row length//2 is the
            # column whose receptive field is centered on frame T//2
            center = length // 2
            cols.append(x[center: center + 1])
        fused = Tensor.concat(cols, axis=1)
        out = (fused @ self._params["head.w"] + self._params["head.b"]) * cfg.output_scale_mm
        return out.reshape(cfg.n_keypoints, 3)

    def predict_window(self, coords, conf, mask) -> np.ndarray:
        return self.forward(self.embed_frames(coords, conf, mask)).data

    def predict_sequence(self, det: PoseSequence2D) -> PoseSequence3D:
        """Per-frame 3D by sliding the window; ends use edge padding."""
        w = self.config.window_len
        left = w // 2
        right = w - left - 1
        pad = ((left, right), (0, 0))
        coords = np.pad(det.frames, pad + ((0, 0),), mode="edge")
        conf = np.pad(det.confidence, pad, mode="edge")
        mask = np.pad(det.mask, pad, mode="edge")
        emb = self.embed_frames(coords, conf, mask).data
        preds = np.empty((det.T, self.config.n_keypoints, 3))
        for t in range(det.T):
            preds[t] = self.forward(emb[t: t + w]).data
        return PoseSequence3D(preds, root_relative=True,
                              actions=None if det.actions is None else list(det.actions))


# ------------------------------------------------------------------ losses
#
# All loss functions run on Tensors so gradients flow to whichever inputs
# carry them; plain arrays and pose containers are lifted as constants.


def _lift_pose(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, PoseSequence3D):
        return Tensor(x.frames)
    return Tensor(np.asarray(x, dtype=np.float64))


def loss_3d(pred, gt) -> Tensor:
    """Mean over joints of squared Euclidean error, mm^2."""
    d = _lift_pose(pred) - _lift_pose(gt)
    return (d * d).sum(axis=-1).reshape(-1).mean()


def loss_multiview(pred_v1, pred_v2, rotation: np.ndarray) -> Tensor:
    """loss_3d between view-1 predictions mapped through R(v1->v2) and view 2."""
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3):
        raise InvalidInputError("rotation must be 3x3")
    return loss_3d(_lift_pose(pred_v1) @ Tensor(r.T), pred_v2)


def loss_2d(pred, gt2d, mask=None, scale_mm: float = None) -> Tensor:
    """Reprojection error in normalized crop units, unmasked keypoints only.

    Accepts a PoseSequence2D or explicit (coords, mask, scale_mm) arrays.
    Masked entries carry exactly zero gradient; a fully masked target gives 0.
    """
    if isinstance(gt2d, PoseSequence2D):
        coords, mask, scale_mm = gt2d.frames, gt2d.mask, gt2d.scale_mm
    else:
        coords = np.asarray(gt2d, dtype=np.float64)
        if mask is None or scale_mm is None:
            raise InvalidInputError("array form needs mask and scale_mm")
    if scale_mm <= 0:
        raise InvalidInputError("scale_mm must be > 0")
    p = _lift_pose(pred)
    proj = (p @ Tensor(_PROJECT)) * (1.0 / scale_mm) + 0.5
    keep = (~np.asarray(mask, dtype=bool)).astype(np.float64)
    if proj.shape != coords.shape or keep.shape != coords.shape[:-1]:
        raise InvalidInputError("prediction and 2D target shapes do not match")
    d = (proj - Tensor(coords)) * Tensor(keep[..., None])
    n = keep.sum()
    return (d * d).sum() * (1.0 / max(n, 1.0))


def total_loss(l3d, lmv, l2d, lgen, weights: LossWeights = LossWeights()) -> Tensor:
    out = Tensor._lift(l3d) + weights.w1 * Tensor._lift(lmv) \
        + weights.w2 * Tensor._lift(l2d) + weights.w3 * Tensor._lift(lgen)
    return out


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    lr: float = 1e-6
    momentum: float = 0.9
    steps_per_epoch: int = 200
    batch_size: int = 8
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    gen_window: int = 4          # consecutive center frames fed to the scorer
    lr_decay: float = 1.0        # per-epoch multiplier
    snapshot_every: int = 25

    def validate(self):
        if self.lr < 0 or not (0 <= self.momentum < 1):
            raise ConfigError("need lr >= 0 and 0 <= momentum < 1")
        if self.steps_per_epoch < 1 or self.gen_window < 2 or self.snapshot_every < 1:
            raise ConfigError("steps_per_epoch >= 1, gen_window >= 2, "
                              "snapshot_every >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_decay <= 0:
            raise ConfigError("lr_decay must be > 0")


def _predict_chain(model: TcnModel, det: PoseSequence2D, start: int, count: int) -> list:
    w = model.config.window_len
    preds = []
    for j in range(start, start + count):
        emb = model.embed_frames(det.frames[j: j + w], det.confidence[j: j + w],
                                 det.mask[j: j + w])
        preds.append(model.forward(emb))
    return preds


def train(model: TcnModel, sequences: list, cfg: TrainConfig,
          epochs: int = 1, scorer=None) -> list:
    """SGD over randomly sampled windows; returns per-epoch loss history.

    Each sequence exposes .views, and each view carries .rotation
    (RotationAugment), .det2d (PoseSequence2D) and .pose3d (that view's
    ground truth, or None for 2D-only sequences, which then contribute
    only the reprojection term).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum)
    w = model.config.window_len
    wt = cfg.weights
    chain_len = cfg.gen_window if scorer is not None else 1
    need = w + chain_len - 1
    usable = [s for s in sequences if s.views and s.views[0].det2d.T >= need]
    if not usable:
        raise InvalidInputError(f"no sequence has the {need} frames a window needs")

    snapshot = model.state_arrays()
    history = []
    zero = Tensor(0.0)
    for epoch in range(epochs):
        sums = {"loss": 0.0, "loss_3d": 0.0, "loss_mv": 0.0,
                "loss_2d": 0.0, "loss_gen": 0.0}
        for step in range(cfg.steps_per_epoch):
            parts = {"loss_3d": zero, "loss_mv": zero, "loss_2d": zero,
                     "loss_gen": zero}
            for _ in range(cfg.batch_size):
                seq = usable[rng.integers(len(usable))]
                n_views = len(seq.views)
                v1 = int(rng.integers(n_views))
                v2 = None
                if n_views > 1:
                    v2 = int(rng.integers(n_views - 1))
                    if v2 >= v1:
                        v2 += 1
                view1 = seq.views[v1]
                start = int(rng.integers(view1.det2d.T - need + 1))
                center = start + w // 2

                chain = _predict_chain(model, view1.det2d, start, chain_len)
                pred1 = chain[0]
                has_gt = view1.pose3d is not None
                if has_gt:
                    parts["loss_3d"] = parts["loss_3d"] + loss_3d(
                        pred1, view1.pose3d.frames[center])
                if v2 is not None and has_gt:
                    view2 = seq.views[v2]
                    emb2 = model.embed_frames(view2.det2d.frames[start: start + w],
                                              view2.det2d.confidence[start: start + w],
                                              view2.det2d.mask[start: start + w])
                    pred2 = model.forward(emb2)
                    r12 = view2.rotation.matrix() @ view1.rotation.matrix().T
                    parts["loss_mv"] = parts["loss_mv"] + loss_multiview(pred1, pred2, r12)
                parts["loss_2d"] = parts["loss_2d"] + loss_2d(
                    pred1, view1.det2d.frames[center], view1.det2d.mask[center],
                    view1.det2d.scale_mm)
                if scorer is not None:
                    window3 = Tensor.concat([p.reshape(1, -1, 3) for p in chain], axis=0)
                    rot = RotationAugment.sample(rng).matrix()
                    parts["loss_gen"] = parts["loss_gen"] + scorer.gen_loss(
                        window3 @ Tensor(rot.T))
            inv = 1.0 / cfg.batch_size
            l3, lmv = parts["loss_3d"] * inv, parts["loss_mv"] * inv
            l2, lgen = parts["loss_2d"] * inv, parts["loss_gen"] * inv
            loss = total_loss(l3, lmv, l2, lgen, wt)

            if not np.isfinite(loss.data):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {step}",
                    checkpoint=snapshot)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if any(not np.all(np.isfinite(p.data)) for p in model.parameters()):
                raise TrainingDivergedError(
                    f"non-finite parameters at epoch {epoch} step {step}",
                    checkpoint=snapshot)
            if (step + 1) % cfg.snapshot_every == 0:
                snapshot = model.state_arrays()

            sums["loss"] += loss.data.item()
            sums["loss_3d"] += l3.data.item()
            sums["loss_mv"] += lmv.data.item()
            sums["loss_2d"] += l2.data.item()
            sums["loss_gen"] += lgen.data.item()
        record = {k: v / cfg.steps_per_epoch for k, v in sums.items()}
        record["epoch"] = epoch
        history.append(record)
        opt.lr *= cfg.lr_decay
    return history
