"""Labeled image sets: a synthetic blob generator and an on-disk container."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from ._io import atomic_dir


@dataclass
class Dataset:
    images: np.ndarray  # float32 [N, C, H, W]
    labels: np.ndarray  # int64 [N]
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)


def class_prototypes(num_classes=10, channels=3, proto_seed=1234, width=(0.12, 0.22)):
    """Per-class blob centre (fractions of the image side), colour and width."""
    rng = np.random.default_rng(proto_seed)
    centers = rng.uniform(0.25, 0.75, size=(num_classes, 2))
    colors = rng.standard_normal((num_classes, channels))
    colors /= np.linalg.norm(colors, axis=1, keepdims=True)
    widths = rng.uniform(width[0], width[1], size=num_classes)
    return centers, colors, widths


def make_blobs(n, num_classes=10, image_size=32, channels=3, noise=0.5, jitter=0.1,
               width=(0.12, 0.22), background=0.5, seed=0, proto_seed=1234) -> Dataset:
    """Synthetic classification images: one coloured Gaussian blob per class.

    Every sample jitters its class blob's centre, amplitude and width, then
    sits on a constant `background` level with i.i.d. pixel noise. Different `seed` values with the same `proto_seed`
    give disjoint draws from the same distribution (train/test splits).
    """
    centers, colors, widths = class_prototypes(num_classes, channels, proto_seed, width)
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    S = image_size
    yy, xx = np.mgrid[0:S, 0:S] / (S - 1)
    c = centers[labels] + rng.uniform(-jitter, jitter, size=(n, 2))
    amp = rng.uniform(0.7, 1.3, size=n)
    w = widths[labels] * rng.uniform(0.8, 1.2, size=n)
    d2 = (yy[None] - c[:, 0, None, None]) ** 2 + (xx[None] - c[:, 1, None, None]) ** 2
    blob = amp[:, None, None] * np.exp(-d2 / (2 * w[:, None, None] ** 2))
    images = colors[labels][:, :, None, None] * blob[:, None]
    images += background + noise * rng.standard_normal(images.shape)
    return Dataset(images.astype(np.float32), labels, num_classes)


def save_dataset(ds: Dataset, path):
    """Directory with manifest.json, images.f32 (little-endian) and labels.i32."""
    with atomic_dir(path) as tmp:
        ds.images.astype("<f4").tofile(os.path.join(tmp, "images.f32"))
        ds.labels.astype("<i4").tofile(os.path.join(tmp, "labels.i32"))
        manifest = {
            "format": "premiumnn-dataset",
            "version": 1,
            "n": len(ds),
            "shape": list(ds.images.shape[1:]),
            "num_classes": ds.num_classes,
            "images": "images.f32",
            "labels": "labels.i32",
        }
        with open(os.path.join(tmp, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2)


def load_dataset(path) -> Dataset:
    with open(os.path.join(path, "manifest.json")) as f:
        m = json.load(f)
    n, shape = m["n"], tuple(m["shape"])
    images = np.fromfile(os.path.join(path, m["images"]), dtype="<f4")
    labels = np.fromfile(os.path.join(path, m["labels"]), dtype="<i4")
    if images.size != n * int(np.prod(shape)) or labels.size != n:
        raise ValueError(f"dataset files in {path} do not match the manifest")
    return Dataset(images.reshape((n,) + shape), labels, m["num_classes"])
