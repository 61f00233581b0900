"""Training checkpoints: a directory holding the Gaussians, the height-field network and metadata."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from ..gaussians import GaussianField, load_gaussians, save_gaussians
from ..heightfield import (CHECKPOINT_VERSION, CheckpointError, CorruptPayloadError, HeightFieldNet,
                           VersionMismatchError, load_net, save_net)

GAUSSIANS_FILE = "gaussians.bin"
NET_FILE = "heightfield.npz"
META_FILE = "meta.json"


class MissingCheckpointError(CheckpointError, FileNotFoundError):
    pass


@dataclass
class Checkpoint:
    field: GaussianField
    net: HeightFieldNet | None
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, gf: GaussianField, net: HeightFieldNet | None, meta: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    save_gaussians(os.path.join(path, GAUSSIANS_FILE), gf)
    if net is not None:
        save_net(os.path.join(path, NET_FILE), net)
    doc = {"format_version": CHECKPOINT_VERSION, "has_heightfield": net is not None, **(meta or {})}
    with open(os.path.join(path, META_FILE), "w") as fh:
        json.dump(doc, fh, indent=2)


def load_checkpoint(path) -> Checkpoint:
    meta_path = os.path.join(path, META_FILE)
    if not os.path.isdir(path) or not os.path.isfile(meta_path):
        raise MissingCheckpointError(f"{path}: no checkpoint found (missing {META_FILE})")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptPayloadError(f"{meta_path}: unreadable metadata ({exc})") from None
    if not isinstance(meta, dict):
        raise CorruptPayloadError(f"{meta_path}: metadata must be a JSON object")
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"{meta_path}: checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
    gpath = os.path.join(path, GAUSSIANS_FILE)
    if not os.path.isfile(gpath):
        raise MissingCheckpointError(f"{path}: missing {GAUSSIANS_FILE}")
    gf = load_gaussians(gpath)
    net = None
    if meta.get("has_heightfield", True):
        npath = os.path.join(path, NET_FILE)
        if not os.path.isfile(npath):
            raise MissingCheckpointError(f"{path}: missing {NET_FILE}")
        net = load_net(npath)
    return Checkpoint(gf, net, meta)
