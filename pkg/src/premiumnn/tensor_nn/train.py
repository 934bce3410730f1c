"""Deterministic minibatch SGD with one parameter snapshot per epoch."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .model import TRAINABLE, ModelGraph, backward, forward_train, model_from_config, predict

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class CheckpointSeries:
    """Parameter snapshots after each epoch; epoch 0 is the initialization."""

    config: dict
    epochs: list
    snapshots: list
    train_accuracy: list  # None for epoch 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.epochs) == len(self.snapshots) == len(self.train_accuracy)):
            raise ValueError("epochs, snapshots and accuracies differ in length")
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise ValueError("epoch numbers must be strictly increasing")
        if self.snapshots:
            ref = {k: v.shape for k, v in self.snapshots[0].items()}
            for e, snap in zip(self.epochs, self.snapshots):
                if {k: v.shape for k, v in snap.items()} != ref:
                    raise ValueError(f"snapshot of epoch {e} differs in tensor names or shapes")

    def __len__(self):
        return len(self.epochs)

    def model_at(self, pos=-1) -> ModelGraph:
        """Model rebuilt from the snapshot at list position `pos`."""
        m = model_from_config(self.config)
        m.load_snapshot(self.snapshots[pos])
        return m

    def final_model(self) -> ModelGraph:
        return self.model_at(-1)

    def tensor_history(self, name) -> np.ndarray:
        """Stack of one tensor across epochs, shape [E, *tensor_shape]."""
        return np.stack([s[name] for s in self.snapshots])


def train(model: ModelGraph, dataset, epochs: int, lr: float, seed: int,
          batch_size: int = 32, momentum: float = 0.9, lr_decay: float = 1.0,
          weight_decay: float = 0.0) -> CheckpointSeries:
    """Train a copy of `model`; the input model is left untouched.

    Minibatches follow a permutation drawn from `seed` each epoch. The
    learning rate is multiplied by `lr_decay` after every epoch.
    """
    if len(dataset) == 0:
        raise TrainingError("empty dataset")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    m = model.copy()
    rng = np.random.default_rng(seed)
    velocity = [{k: np.zeros_like(p[k], dtype=np.float64) for k in TRAINABLE.get(s.kind, ()) if k in p}
                for s, p in zip(m.layers, m.params)]
    series = CheckpointSeries(m.config(), [0], [m.snapshot()], [None],
                              meta={"lr": lr, "seed": seed, "batch_size": batch_size,
                                    "momentum": momentum, "lr_decay": lr_decay,
                                    "weight_decay": weight_decay})
    n = len(dataset)
    step = lr
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        correct = 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            x, y = dataset.images[idx], dataset.labels[idx]
            logits, tape = forward_train(m, x)
            loss, dlogits = L.softmax_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            correct += int((logits.argmax(axis=1) == y).sum())
            if step == 0:
                continue
            grads, _ = backward(m, tape, dlogits)
            for p, g, v in zip(m.params, grads, velocity):
                for k, gk in g.items():
                    if weight_decay and k in ("weight", "proj"):
                        gk = gk + weight_decay * p[k]
                    v[k] = momentum * v[k] + gk
                    p[k] = (p[k] - step * v[k]).astype(np.float32)
        acc = correct / n
        log.info("epoch %d: train accuracy %.4f", epoch, acc)
        series.epochs.append(epoch)
        series.snapshots.append(m.snapshot())
        series.train_accuracy.append(acc)
        step *= lr_decay
    return series


def accuracy(model: ModelGraph, dataset, batch_size=256) -> float:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    return float((predict(model, dataset.images, batch_size) == dataset.labels).mean())

