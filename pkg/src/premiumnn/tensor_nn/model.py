"""Layered CNN with named parameter tensors and residual shortcuts."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import layers as L

LAYER_KINDS = (
    "conv2d",
    "batchnorm",
    "relu",
    "maxpool",
    "global_avg_pool",
    "fully_connected",
    "residual_add",
)

# Which tensors of a layer are trained by SGD (running statistics are not).
TRAINABLE = {
    "conv2d": ("weight",),
    "batchnorm": ("gamma", "beta"),
    "fully_connected": ("weight", "bias"),
    "residual_add": ("proj",),
}


@dataclass
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    pool: int = 2
    skip_from: Optional[int] = None  # -1 is the model input

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_dict(self):
        d = {"kind": self.kind}
        for k in ("in_channels", "out_channels", "kernel", "stride", "padding", "pool", "skip_from"):
            v = getattr(self, k)
            if v != LayerSpec.__dataclass_fields__[k].default:
                d[k] = v
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ModelGraph:
    layers: list
    params: list  # one dict of name -> float32 array per layer
    input_shape: tuple
    num_classes: int
    seed: int = 0
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9
    bn_literal: bool = False
    shapes: list = field(default=None, repr=False)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        if len(self.params) != len(self.layers):
            raise ValueError("params must have one entry per layer")
        self.shapes = infer_shapes(self)

    def config(self):
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "seed": self.seed,
            "bn_eps": self.bn_eps,
            "bn_momentum": self.bn_momentum,
            "bn_literal": self.bn_literal,
            "layers": [s.to_dict() for s in self.layers],
        }

    def copy(self) -> "ModelGraph":
        return copy.deepcopy(self)

    def named_tensors(self):
        """Yield (name, array) for every stored tensor, in layer order."""
        for i, p in enumerate(self.params):
            for k in sorted(p):
                yield f"{i}.{k}", p[k]

    def snapshot(self) -> dict:
        return {name: arr.copy() for name, arr in self.named_tensors()}

    def load_snapshot(self, snap: dict):
        for i, p in enumerate(self.params):
            for k in p:
                arr = snap[f"{i}.{k}"]
                if arr.shape != p[k].shape:
                    raise ValueError(f"shape mismatch for {i}.{k}: {arr.shape} vs {p[k].shape}")
                p[k] = np.array(arr, dtype=np.float32)

    def layer_indices(self, kind):
        return [i for i, s in enumerate(self.layers) if s.kind == kind]


def infer_shapes(model: ModelGraph):
    """Output shape (without batch dim) of every layer; raises on a broken chain."""
    shapes = []
    cur = tuple(model.input_shape)

    def src_shape(j):
        return tuple(model.input_shape) if j == -1 else shapes[j]

    for i, (spec, p) in enumerate(zip(model.layers, model.params)):
        k = spec.kind
        if k == "conv2d":
            if len(cur) != 3:
                raise ValueError(f"layer {i}: conv2d needs a C,H,W input, got {cur}")
            w = p["weight"]
            if w.shape != (spec.out_channels, cur[0], spec.kernel, spec.kernel):
                raise ValueError(f"layer {i}: filter shape {w.shape} does not match input {cur}")
            Ho, Wo = L.conv_output_size(cur[1], cur[2], spec.kernel, spec.kernel, spec.stride, spec.padding)
            cur = (spec.out_channels, Ho, Wo)
        elif k == "batchnorm":
            for name in ("gamma", "beta", "running_mean", "running_var"):
                if p[name].shape != (cur[0],):
                    raise ValueError(f"layer {i}: {name} has shape {p[name].shape}, expected ({cur[0]},)")
            if np.any(p["running_var"] < 0):
                raise ValueError(f"layer {i}: negative running variance")
        elif k == "maxpool":
            cur = (cur[0], cur[1] // spec.pool, cur[2] // spec.pool)
        elif k == "global_avg_pool":
            cur = (cur[0],)
        elif k == "fully_connected":
            if len(cur) != 1:
                raise ValueError(f"layer {i}: fully_connected needs a flat input, got {cur}")
            if p["weight"].shape != (spec.out_channels, cur[0]):
                raise ValueError(f"layer {i}: weight shape {p['weight'].shape} does not match input {cur}")
            cur = (spec.out_channels,)
        elif k == "residual_add":
            if spec.skip_from is None or not -1 <= spec.skip_from < i:
                raise ValueError(f"layer {i}: residual_add needs an earlier skip_from")
            s = src_shape(spec.skip_from)
            if "proj" in p:
                stride = s[1] // cur[1]
                if p["proj"].shape != (cur[0], s[0], 1, 1) or stride < 1:
                    raise ValueError(f"layer {i}: projection cannot map {s} to {cur}")
                s = (cur[0],) + L.conv_output_size(s[1], s[2], 1, 1, stride)
            if s != cur:
                raise ValueError(f"layer {i}: shortcut shape {s} does not match {cur}")
        shapes.append(cur)
    if cur != (model.num_classes,):
        raise ValueError(f"model output shape {cur} does not match {model.num_classes} classes")
    return shapes


def _proj_stride(src_shape, main_shape):
    return src_shape[2] // main_shape[2]


def forward(model: ModelGraph, x, return_embedding=False):
    """Inference pass. Returns float32 logits ([N, K], or [K] for a single input).

    With return_embedding, also returns the input to the final fully connected
    layer.
    """
    x = np.asarray(x)
    single = x.ndim == len(model.input_shape)
    if single:
        x = x[None]
    if tuple(x.shape[1:]) != model.input_shape:
        raise ValueError(f"input shape {x.shape[1:]} does not match model {model.input_shape}")
    outs = []
    cur = x.astype(np.float64)
    embedding = None
    for i, (spec, p) in enumerate(zip(model.layers, model.params)):
        k = spec.kind
        if k == "conv2d":
            cur, _ = L.conv2d_forward(cur, p["weight"], spec.stride, spec.padding)
        elif k == "batchnorm":
            cur = L.batchnorm_forward(cur, p["gamma"], p["beta"], p["running_mean"],
                                      p["running_var"], model.bn_eps, model.bn_literal)
        elif k == "relu":
            cur = L.relu_forward(cur)
        elif k == "maxpool":
            cur, _ = L.maxpool_forward(cur, spec.pool)
        elif k == "global_avg_pool":
            cur = L.global_avg_pool_forward(cur)
        elif k == "fully_connected":
            embedding = cur
            cur = L.fc_forward(cur, p["weight"], p["bias"])
        elif k == "residual_add":
            src = x.astype(np.float64) if spec.skip_from == -1 else outs[spec.skip_from]
            if "proj" in p:
                src, _ = L.conv2d_forward(src, p["proj"], _proj_stride(src.shape, cur.shape))
            cur = cur + src
        outs.append(cur)
    logits = cur.astype(np.float32)
    if single:
        logits = logits[0]
        embedding = None if embedding is None else embedding[0]
    if return_embedding:
        return logits, None if embedding is None else embedding.astype(np.float32)
    return logits


def predict(model: ModelGraph, x, batch_size=256):
    x = np.asarray(x)
    preds = [forward(model, x[i:i + batch_size]).argmax(axis=1) for i in range(0, len(x), batch_size)]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def forward_train(model: ModelGraph, x, update_stats=True):
    """Training pass with batch statistics. Returns (logits float64, tape).

    Running statistics are updated in place when update_stats is set.
    """
    outs, tape = [], []
    x = np.asarray(x, np.float64)
    cur = x
    mom = model.bn_momentum
    for i, (spec, p) in enumerate(zip(model.layers, model.params)):
        k = spec.kind
        inp = cur
        if k == "conv2d":
            cur, cache = L.conv2d_forward(cur, p["weight"], spec.stride, spec.padding)
        elif k == "batchnorm":
            cur, mu, var, cache = L.batchnorm_train_forward(cur, p["gamma"], p["beta"],
                                                            model.bn_eps, model.bn_literal)
            if update_stats:
                p["running_mean"] = (mom * p["running_mean"] + (1 - mom) * mu).astype(np.float32)
                p["running_var"] = (mom * p["running_var"] + (1 - mom) * var).astype(np.float32)
        elif k == "relu":
            cur = L.relu_forward(cur)
            cache = inp
        elif k == "maxpool":
            cur, cache = L.maxpool_forward(cur, spec.pool)
        elif k == "global_avg_pool":
            cur = L.global_avg_pool_forward(cur)
            cache = inp.shape
        elif k == "fully_connected":
            cur = L.fc_forward(cur, p["weight"], p["bias"])
            cache = inp
        elif k == "residual_add":
            src = x if spec.skip_from == -1 else outs[spec.skip_from]
            cache = None
            if "proj" in p:
                src, cache = L.conv2d_forward(src, p["proj"], _proj_stride(src.shape, cur.shape))
            cur = cur + src
        outs.append(cur)
        tape.append(cache)
    return cur, tape


def backward(model: ModelGraph, tape, dlogits):
    """Gradients of every trainable tensor, as a list of dicts aligned with layers."""
    n = len(model.layers)
    grads = [dict() for _ in range(n)]
    dout = [None] * n
    dout[-1] = dlogits
    dinput = None

    def push(j, g):
        nonlocal dinput
        if j == -1:
            dinput = g if dinput is None else dinput + g
        else:
            dout[j] = g if dout[j] is None else dout[j] + g

    for i in range(n - 1, -1, -1):
        g = dout[i]
        if g is None:
            continue
        spec, p, cache = model.layers[i], model.params[i], tape[i]
        k = spec.kind
        if k == "conv2d":
            dx, grads[i]["weight"] = L.conv2d_backward(g, cache)
        elif k == "batchnorm":
            dx, grads[i]["gamma"], grads[i]["beta"] = L.batchnorm_backward(g, cache)
        elif k == "relu":
            dx = L.relu_backward(g, cache)
        elif k == "maxpool":
            dx = L.maxpool_backward(g, cache)
        elif k == "global_avg_pool":
            dx = L.global_avg_pool_backward(g, cache)
        elif k == "fully_connected":
            dx, grads[i]["weight"], grads[i]["bias"] = L.fc_backward(g, cache, p["weight"])
        elif k == "residual_add":
            dx = g
            if cache is not None:
                dsrc, grads[i]["proj"] = L.conv2d_backward(g, cache)
            else:
                dsrc = g
            push(spec.skip_from, dsrc)
        push(i - 1, dx)
    return grads, dinput


def _he(rng, shape, fan_in):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def init_params(layers, input_shape, seed):
    """Fresh parameters for a layer list: He-normal filters, unit bn scale."""
    rng = np.random.default_rng(seed)
    params = []
    shapes = []
    cur = tuple(input_shape)
    for spec in layers:
        p = {}
        k = spec.kind
        if k == "conv2d":
            c = cur[0]
            p["weight"] = _he(rng, (spec.out_channels, c, spec.kernel, spec.kernel), c * spec.kernel ** 2)
            Ho, Wo = L.conv_output_size(cur[1], cur[2], spec.kernel, spec.kernel, spec.stride, spec.padding)
            cur = (spec.out_channels, Ho, Wo)
        elif k == "batchnorm":
            c = cur[0]
            p["gamma"] = np.ones(c, np.float32)
            p["beta"] = np.zeros(c, np.float32)
            p["running_mean"] = np.zeros(c, np.float32)
            p["running_var"] = np.ones(c, np.float32)
        elif k == "maxpool":
            cur = (cur[0], cur[1] // spec.pool, cur[2] // spec.pool)
        elif k == "global_avg_pool":
            cur = (cur[0],)
        elif k == "fully_connected":
            p["weight"] = (rng.standard_normal((spec.out_channels, cur[0])) / np.sqrt(cur[0])).astype(np.float32)
            p["bias"] = np.zeros(spec.out_channels, np.float32)
            cur = (spec.out_channels,)
        elif k == "residual_add":
            src = tuple(input_shape) if spec.skip_from == -1 else shapes[spec.skip_from]
            if src != cur:
                p["proj"] = _he(rng, (cur[0], src[0], 1, 1), src[0])
        params.append(p)
        shapes.append(cur)
    return params


def build_model(layers, input_shape, num_classes, seed=0, **kw) -> ModelGraph:
    layers = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in layers]
    return ModelGraph(layers, init_params(layers, input_shape, seed), tuple(input_shape),
                      num_classes, seed, **kw)


def resnet_layers(in_channels=3, widths=(8, 16), num_classes=10, blocks_per_stage=(2, 1)):
    """ResNet-style stack: stem conv, residual blocks, global pooling, classifier.

    The first block of every stage after the first downsamples by 2 and uses a
    1x1 projection on its shortcut.
    """
    specs = [
        LayerSpec("conv2d", in_channels, widths[0], kernel=3, padding=1),
        LayerSpec("batchnorm"),
        LayerSpec("relu"),
    ]
    c = widths[0]
    for stage, (w, nb) in enumerate(zip(widths, blocks_per_stage)):
        for b in range(nb):
            stride = 2 if (stage > 0 and b == 0) else 1
            skip = len(specs) - 1
            specs += [
                LayerSpec("conv2d", c, w, kernel=3, stride=stride, padding=1),
                LayerSpec("batchnorm"),
                LayerSpec("relu"),
                LayerSpec("conv2d", w, w, kernel=3, padding=1),
                LayerSpec("batchnorm"),
                LayerSpec("residual_add", skip_from=skip),
                LayerSpec("relu"),
            ]
            c = w
    specs += [LayerSpec("global_avg_pool"), LayerSpec("fully_connected", c, num_classes)]
    return specs


def build_resnet(input_shape=(3, 32, 32), num_classes=10, widths=(8, 16),
                 blocks_per_stage=(2, 1), seed=0, **kw) -> ModelGraph:
    return build_model(resnet_layers(input_shape[0], widths, num_classes, blocks_per_stage),
                       input_shape, num_classes, seed, **kw)


def model_from_config(cfg: dict, params=None) -> ModelGraph:
    layers = [LayerSpec.from_dict(d) for d in cfg["layers"]]
    if params is None:
        params = init_params(layers, cfg["input_shape"], cfg.get("seed", 0))
    return ModelGraph(layers, params, tuple(cfg["input_shape"]), cfg["num_classes"],
                      cfg.get("seed", 0), cfg.get("bn_eps", 1e-5), cfg.get("bn_momentum", 0.9),
                      cfg.get("bn_literal", False))
