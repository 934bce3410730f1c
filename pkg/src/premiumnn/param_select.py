"""Choosing which parameters to protect, and measuring how sensitive they are."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .pin_vault import ParamCoordinate
from .tensor_nn.model import forward

log = logging.getLogger(__name__)

STRATEGIES = ("bn_full_layer", "bn_dynamic", "conv_sampled")

# below this magnitude the relative rule is replaced by an absolute threshold r * ZERO_SCALE
ZERO_GUARD = 1e-12
ZERO_SCALE = 1e-3


@dataclass
class StaticityReport:
    """Per-tensor staticity over a checkpoint series.

    `unchanged[name]` has one row per epoch transition (e-1 -> e);
    `epochs_static[name]` counts trailing unchanged transitions per element.
    """

    epochs: list
    r: float
    k: int
    unchanged: dict
    epochs_static: dict
    is_static: dict

    def static_fraction(self, name) -> np.ndarray:
        """Fraction of elements of `name` unchanged at each transition, aligned with epochs[1:]."""
        u = self.unchanged[name]
        return u.reshape(len(u), -1).mean(axis=1)

    def static_fraction_at(self, names, epoch) -> float:
        """Pooled unchanged fraction across `names` at the transition ending at `epoch`."""
        pos = self.epochs.index(epoch) - 1
        if pos < 0:
            raise ValueError("the first epoch has no preceding transition")
        tot = sum(self.unchanged[n][pos].size for n in names)
        return float(sum(self.unchanged[n][pos].sum() for n in names) / tot)


def unchanged_mask(prev, cur, r):
    prev = np.asarray(prev, np.float64)
    cur = np.asarray(cur, np.float64)
    scale = np.abs(prev)
    thresh = np.where(scale < ZERO_GUARD, r * ZERO_SCALE, r * scale)
    return np.abs(cur - prev) < thresh


def detect_static(series, r: float = 1e-2, k: int = 1, names=None) -> StaticityReport:
    if r <= 0:
        raise ValueError("r must be positive")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(series) < k + 1:
        raise ValueError(f"need at least {k + 1} epochs, series has {len(series)}")
    if names is None:
        names = [n for n in series.snapshots[0] if not n.split(".", 1)[1].startswith("running_")]
    unchanged, trailing, static = {}, {}, {}
    for name in names:
        h = series.tensor_history(name)
        u = np.stack([unchanged_mask(h[e - 1], h[e], r) for e in range(1, len(h))])
        unchanged[name] = u
        # count consecutive True values from the end
        run = np.zeros(u.shape[1:], dtype=np.int64)
        alive = np.ones(u.shape[1:], dtype=bool)
        for row in u[::-1]:
            alive &= row
            run += alive
        trailing[name] = run
        static[name] = run >= k
    return StaticityReport(list(series.epochs), r, k, unchanged, trailing, static)


@dataclass
class SelectionResult:
    strategy: str
    coords: list
    true_values: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if len(self.coords) != len(self.true_values):
            raise ValueError("coords and values differ in length")
        if len(set(self.coords)) != len(self.coords):
            raise ValueError("duplicate coordinates")

    def to_json(self):
        return {
            "strategy": self.strategy,
            "coords": [c.to_json() for c in self.coords],
            "values": [float(v) for v in self.true_values],
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["strategy"], [ParamCoordinate.from_json(c) for c in d["coords"]],
                   list(d["values"]), d.get("provenance", {}))


def _require(model, layer_index, kind):
    if not 0 <= layer_index < len(model.layers):
        raise ValueError(f"layer {layer_index} does not exist")
    if model.layers[layer_index].kind != kind:
        raise ValueError(f"layer {layer_index} is {model.layers[layer_index].kind}, not {kind}")


def select_bn_full_layer(model, layer_index: int) -> SelectionResult:
    """Every gamma of one batch normalization layer, in channel order."""
    _require(model, layer_index, "batchnorm")
    gamma = model.params[layer_index]["gamma"]
    coords = [ParamCoordinate(layer_index, "bn_gamma", (c,)) for c in range(len(gamma))]
    return SelectionResult("bn_full_layer", coords, [float(v) for v in gamma],
                           {"layer": layer_index})


def select_bn_dynamic(series, layer_indices, r: float = 1e-2, k: int = 1) -> SelectionResult:
    """Gammas of the listed bn layers that were not static over the last k epochs."""
    model = series.final_model()
    for i in layer_indices:
        _require(model, i, "batchnorm")
    rep = detect_static(series, r, k, names=[f"{i}.gamma" for i in layer_indices])
    coords, values = [], []
    for i in layer_indices:
        gamma = model.params[i]["gamma"]
        for c in np.flatnonzero(~rep.is_static[f"{i}.gamma"]):
            coords.append(ParamCoordinate(i, "bn_gamma", (int(c),)))
            values.append(float(gamma[c]))
    if not coords:
        log.warning("no dynamic gamma in layers %s (r=%g, k=%d); selection is empty",
                    list(layer_indices), r, k)
    return SelectionResult("bn_dynamic", coords, values,
                           {"layers": list(layer_indices), "r": r, "k": k,
                            "epoch": series.epochs[-1]})


def select_conv_sampled(model, layer_index=None, rng_seed: int = 0,
                        filter_first: bool = False) -> SelectionResult:
    """One filter weight per output channel of a conv layer.

    By default the weight is uniform over the C_in*h*w entries of the channel;
    with filter_first an input-channel filter is drawn first, then an entry.
    Defaults to the first convolution of the model.
    """
    if layer_index is None:
        convs = model.layer_indices("conv2d")
        if not convs:
            raise ValueError("model has no convolution")
        layer_index = convs[0]
    _require(model, layer_index, "conv2d")
    W = model.params[layer_index]["weight"]
    co, ci, h, w = W.shape
    rng = np.random.default_rng(rng_seed)
    coords, values = [], []
    for c in range(co):
        if filter_first:
            idx = (int(rng.integers(ci)), int(rng.integers(h)), int(rng.integers(w)))
        else:
            idx = tuple(int(i) for i in np.unravel_index(rng.integers(ci * h * w), (ci, h, w)))
        coords.append(ParamCoordinate(layer_index, "conv_filter", (c,) + idx))
        values.append(float(W[(c,) + idx]))
    return SelectionResult("conv_sampled", coords, values,
                           {"layer": layer_index, "seed": rng_seed, "filter_first": filter_first})


@dataclass
class SensitivityResult:
    delta: float
    cap: float
    sign: str  # "+", "-" or "none-found"

    @property
    def capped(self) -> bool:
        return self.sign == "none-found"


def _grid(grid_step, cap):
    if grid_step <= 0 or cap <= 0:
        raise ValueError("grid_step and cap must be positive")
    steps = math.ceil(cap / grid_step - 1e-9)
    for m in range(1, steps + 1):
        d = min(m * grid_step, cap)
        yield d
        yield -d


def sensitivity_many(model, inputs, coords, grid_step: float = 0.05, cap: float = 6.0):
    """Smallest |delta| added to all coords at once that changes each input's predicted class.

    Candidates are scanned by increasing magnitude, positive before negative.
    Inputs with no flip up to `cap` get delta = cap.
    """
    inputs = np.asarray(inputs)
    m = model.copy()
    slots = [c.resolve(m) for c in coords]
    base_vals = [float(t[idx]) for t, idx in slots]
    ref = forward(m, inputs).argmax(axis=1)
    result = [None] * len(inputs)
    pending = np.arange(len(inputs))
    for d in _grid(grid_step, cap):
        if len(pending) == 0:
            break
        for (t, idx), v in zip(slots, base_vals):
            t[idx] = np.float32(v + d)
        pred = forward(m, inputs[pending]).argmax(axis=1)
        flipped = pred != ref[pending]
        for j in pending[flipped]:
            result[j] = SensitivityResult(abs(d), cap, "+" if d > 0 else "-")
        pending = pending[~flipped]
    for j in pending:
        result[j] = SensitivityResult(cap, cap, "none-found")
    return result


def sensitivity(model, x, coords, grid_step: float = 0.05, cap: float = 6.0) -> SensitivityResult:
    return sensitivity_many(model, np.asarray(x)[None], coords, grid_step, cap)[0]
