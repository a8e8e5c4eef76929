"""File formats: topology, pose tables, key=value configs, npz checkpoints.

Pose tables are plain CSV with a header. 3D:
    frame,keypoint,x,y,z,conf,mask[,action]
2D drops the z column. Coordinates are mm (3D) or normalized crop units (2D).
Header comment lines (before the CSV header) carry container metadata:
    # scale_mm = 2000
    # root_relative = 1
"""

from __future__ import annotations

import importlib.resources
import json
from typing import Optional

import numpy as np

from .errors import ConfigError, InvalidInputError, TopologyError
from .skeleton import CylinderSpec, PoseSequence2D, PoseSequence3D, SkeletonTopology

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------- topology

def parse_topology(text: str) -> SkeletonTopology:
    names = []
    bones = []
    radii = []
    cylinders = []
    head = None
    torso = None

    def idx(name):
        try:
            return names.index(name)
        except ValueError:
            raise TopologyError(f"unknown keypoint {name!r} in topology file") from None

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "keypoint" and len(parts) == 2:
                names.append(parts[1])
            elif kind == "bone" and len(parts) == 4:
                bones.append((idx(parts[1]), idx(parts[2])))
                radii.append(float(parts[3]))
            elif kind == "head" and len(parts) == 3:
                head = (idx(parts[1]), idx(parts[2]))
            elif kind == "torso" and len(parts) == 6:
                torso = tuple(idx(p) for p in parts[1:])
            elif kind == "cylinder" and len(parts) == 5:
                r = None if parts[4] == "torso" else float(parts[4])
                cylinders.append(CylinderSpec(parts[1], idx(parts[2]), idx(parts[3]), r))
            else:
                raise TopologyError(f"unrecognized topology line: {raw!r}")
        except ValueError as exc:
            raise TopologyError(f"line {lineno}: {exc}") from None
    if head is None or torso is None:
        raise TopologyError("topology file must define head and torso lines")
    return SkeletonTopology(tuple(names), tuple(bones), np.array(radii),
                            head, torso, tuple(cylinders))


def read_topology(path) -> SkeletonTopology:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_topology(fh.read())


def default_topology() -> SkeletonTopology:
    text = importlib.resources.files("poselift.data").joinpath("h36m17.topo").read_text()
    return parse_topology(text)


# ---------------------------------------------------------------- pose tables

def _split_meta(lines):
    meta = {}
    body = []
    for line in lines:
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            s = s[1:].strip()
            if "=" in s:
                key, val = s.split("=", 1)
                meta[key.strip()] = val.strip()
            continue
        body.append(s)
    return meta, body


def _parse_rows(body, want_z, topo: SkeletonTopology):
    header = body[0].split(",")
    base = ["frame", "keypoint", "x", "y"] + (["z"] if want_z else []) + ["conf", "mask"]
    if header[:len(base)] != base:
        raise InvalidInputError(f"unexpected pose header {body[0]!r}")
    has_action = len(header) > len(base) and header[len(base)] == "action"
    dim = 3 if want_z else 2
    records = {}
    actions = {}
    for row in body[1:]:
        parts = row.split(",")
        f = int(parts[0])
        k = topo.index(parts[1])
        coords = [float(v) for v in parts[2:2 + dim]]
        conf = float(parts[2 + dim])
        mask = parts[3 + dim].strip() in ("1", "true", "True")
        if (f, k) in records:
            raise InvalidInputError(f"duplicate record frame={f} keypoint={parts[1]}")
        records[(f, k)] = (coords, conf, mask)
        if has_action and len(parts) > 4 + dim:
            actions[f] = parts[4 + dim]
    frames_present = sorted({f for f, _ in records})
    if frames_present != list(range(len(frames_present))):
        raise InvalidInputError("frame indices must be contiguous from 0")
    t, k = len(frames_present), topo.K
    coords = np.zeros((t, k, dim))
    conf = np.zeros((t, k))
    mask = np.zeros((t, k), dtype=bool)
    for f in range(t):
        for j in range(k):
            if (f, j) not in records:
                raise InvalidInputError(f"missing record frame={f} keypoint={topo.keypoint_names[j]}")
            c, cf, m = records[(f, j)]
            coords[f, j] = c
            conf[f, j] = cf
            mask[f, j] = m
    action_list = [actions.get(f, "") for f in range(t)] if actions else None
    return coords, conf, mask, action_list


def read_pose3d(path, topo: SkeletonTopology) -> PoseSequence3D:
    with open(path, "r", encoding="utf-8") as fh:
        meta, body = _split_meta(fh.readlines())
    coords, conf, mask, actions = _parse_rows(body, True, topo)
    vis = ~mask if mask.any() else None
    root_rel = meta.get("root_relative", "1") not in ("0", "false", "False")
    return PoseSequence3D(coords, visibility=vis, root_relative=root_rel, actions=actions)


def write_pose3d(path, pose: PoseSequence3D, topo: SkeletonTopology) -> None:
    lines = [f"# root_relative = {1 if pose.root_relative else 0}"]
    cols = "frame,keypoint,x,y,z,conf,mask"
    if pose.actions is not None:
        cols += ",action"
    lines.append(cols)
    vis = pose.visibility
    for f in range(pose.T):
        for j, name in enumerate(topo.keypoint_names):
            x, y, z = pose.frames[f, j]
            masked = 0 if vis is None else int(not vis[f, j])
            row = f"{f},{name},{x:.9g},{y:.9g},{z:.9g},1,{masked}"
            if pose.actions is not None:
                row += f",{pose.actions[f]}"
            lines.append(row)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pose2d(path, topo: SkeletonTopology) -> PoseSequence2D:
    with open(path, "r", encoding="utf-8") as fh:
        meta, body = _split_meta(fh.readlines())
    coords, conf, mask, actions = _parse_rows(body, False, topo)
    scale = float(meta["scale_mm"]) if "scale_mm" in meta else None
    return PoseSequence2D(coords, confidence=conf, mask=mask, scale_mm=scale, actions=actions)


def write_pose2d(path, pose: PoseSequence2D, topo: SkeletonTopology) -> None:
    lines = []
    if pose.scale_mm is not None:
        lines.append(f"# scale_mm = {pose.scale_mm:.9g}")
    cols = "frame,keypoint,x,y,conf,mask"
    if pose.actions is not None:
        cols += ",action"
    lines.append(cols)
    for f in range(pose.T):
        for j, name in enumerate(topo.keypoint_names):
            x, y = pose.frames[f, j]
            row = f"{f},{name},{x:.9g},{y:.9g},{pose.confidence[f, j]:.9g},{int(pose.mask[f, j])}"
            if pose.actions is not None:
                row += f",{pose.actions[f]}"
            lines.append(row)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------- configs

def parse_config(text: str) -> dict:
    """Flat `key = value` lines, '#' comments. Values stay strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def read_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def cfg_get(cfg: dict, key: str, default=None, cast=None):
    if key not in cfg:
        if default is None and cast is not None:
            return None
        return default
    val = cfg[key]
    if cast is None:
        return val
    try:
        if cast is bool:
            return val in ("1", "true", "True", "yes")
        if cast is list:
            return [v.strip() for v in val.split(",") if v.strip()]
        return cast(val)
    except ValueError:
        raise ConfigError(f"config key {key}={val!r} not a valid {cast.__name__}") from None


def cfg_ints(cfg: dict, key: str, default):
    if key not in cfg:
        return tuple(default)
    try:
        return tuple(int(v) for v in cfg[key].split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"config key {key} must be comma-separated ints") from None


def cfg_floats(cfg: dict, key: str, default):
    if key not in cfg:
        return tuple(default)
    try:
        return tuple(float(v) for v in cfg[key].split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"config key {key} must be comma-separated floats") from None


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    """Single npz: version, JSON meta, flat float64 arrays."""
    payload = {"__version__": np.array(CHECKPOINT_VERSION),
               "__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, arr in arrays.items():
        if name.startswith("__"):
            raise InvalidInputError(f"reserved array name {name!r}")
        payload[name] = np.asarray(arr, dtype=np.float64)
    np.savez(path, **payload)


def load_checkpoint(path):
    with np.load(path) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {version}")
        meta = json.loads(bytes(data["__meta__"]).decode())
        arrays = {k: data[k].copy() for k in data.files if not k.startswith("__")}
    return arrays, meta
