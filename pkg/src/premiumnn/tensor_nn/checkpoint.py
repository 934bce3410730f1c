"""Checkpoint container: a directory holding manifest.json and raw f32le tensors.

Layout::

    manifest.json
    epoch_0000/<tensor name>.f32
    epoch_0001/...

The manifest records the model config, the epoch list with training
accuracies, and for every tensor its file, shape and dtype.
"""

import json
import os

import numpy as np

from ._io import atomic_dir
from .train import CheckpointSeries

FORMAT = "premiumnn-checkpoints"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoints(series: CheckpointSeries, path):
    with atomic_dir(path) as tmp:
        entries = []
        for epoch, snap, acc in zip(series.epochs, series.snapshots, series.train_accuracy):
            sub = f"epoch_{epoch:04d}"
            os.makedirs(os.path.join(tmp, sub))
            tensors = {}
            for name in sorted(snap):
                rel = f"{sub}/{name}.f32"
                arr = np.asarray(snap[name])
                arr.astype("<f4").tofile(os.path.join(tmp, rel))
                tensors[name] = {"file": rel, "shape": list(arr.shape), "dtype": "f32le"}
            entries.append({"epoch": epoch, "train_accuracy": acc, "tensors": tensors})
        manifest = {
            "format": FORMAT,
            "version": VERSION,
            "model": series.config,
            "meta": series.meta,
            "epochs": entries,
        }
        with open(os.path.join(tmp, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=1)


def load_checkpoints(path) -> CheckpointSeries:
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath) as f:
            m = json.load(f)
    except FileNotFoundError:
        raise CheckpointError(f"no manifest.json in {path}") from None
    except json.JSONDecodeError as e:
        raise CheckpointError(f"malformed manifest: {e}") from None
    if m.get("format") != FORMAT or m.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint format {m.get('format')!r} v{m.get('version')}")
    for key in ("model", "epochs"):
        if key not in m:
            raise CheckpointError(f"manifest lacks {key!r}")
    epochs, snaps, accs = [], [], []
    for entry in m["epochs"]:
        snap = {}
        for name, t in entry["tensors"].items():
            if t.get("dtype") != "f32le":
                raise CheckpointError(f"tensor {name}: unsupported dtype {t.get('dtype')!r}")
            fpath = os.path.join(path, t["file"])
            if not os.path.exists(fpath):
                raise CheckpointError(f"tensor {name} of epoch {entry['epoch']}: missing file {t['file']}")
            arr = np.fromfile(fpath, dtype="<f4")
            shape = tuple(t["shape"])
            if arr.size != int(np.prod(shape)):
                raise CheckpointError(f"tensor {name}: file size does not match shape {shape}")
            snap[name] = arr.reshape(shape).astype(np.float32)
        epochs.append(entry["epoch"])
        snaps.append(snap)
        accs.append(entry.get("train_accuracy"))
    try:
        return CheckpointSeries(m["model"], epochs, snaps, accs, m.get("meta", {}))
    except ValueError as e:
        raise CheckpointError(str(e)) from None


def save_model(model, path, epoch=0):
    """Single-snapshot container for a shipped model."""
    save_checkpoints(CheckpointSeries(model.config(), [epoch], [model.snapshot()], [None]), path)


def load_model(path, pos=-1):
    series = load_checkpoints(path)
    try:
        return series.model_at(pos)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint does not fit its model config: {e}") from None
