"""Flat key = value pipeline configuration.

Example::

    # model
    image_size = 16
    widths = 8,16
    blocks = 2,1
    # data: either a dataset directory or synthetic generator settings
    train_data = data/train
    synthetic_seed = 1
    n_train = 1000
    # training
    lr = 0.05
    lr_decay = 0.8
    # locking
    field_degree = 521
    quant_bits = 8

Lines starting with '#' are comments. Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields

from .field_crypto import SUPPORTED_DEGREES
from .param_select import STRATEGIES


@dataclass
class PipelineConfig:
    # architecture
    image_size: int = 32
    channels: int = 3
    num_classes: int = 10
    widths: tuple = (8, 16)
    blocks: tuple = (2, 1)
    bn_literal: bool = False
    # data
    train_data: str = ""
    test_data: str = ""
    synthetic_seed: int = 1
    n_train: int = 1000
    n_test: int = 500
    noise: float = 0.5
    jitter: float = 0.1
    background: float = 0.5
    # training
    epochs: int = 10
    lr: float = 0.05
    momentum: float = 0.9
    lr_decay: float = 0.8
    batch_size: int = 32
    # selection
    strategy: str = "conv_sampled"
    layers: tuple = ()
    r: float = 1e-2
    k: int = 1
    # locking
    field_degree: int = 521
    quant_bits: int = 8
    pin: str = ""

    def __post_init__(self):
        if self.field_degree not in SUPPORTED_DEGREES:
            raise ValueError(f"field_degree must be one of {list(SUPPORTED_DEGREES)}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {list(STRATEGIES)}")
        if len(self.widths) != len(self.blocks):
            raise ValueError("widths and blocks need the same length")

    @property
    def input_shape(self):
        return (self.channels, self.image_size, self.image_size)

    def blob_kwargs(self):
        return dict(num_classes=self.num_classes, image_size=self.image_size,
                    channels=self.channels, noise=self.noise, jitter=self.jitter,
                    background=self.background)


def _convert(value: str, default):
    if isinstance(default, bool):
        v = value.strip().lower()
        if v not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {value!r}")
        return v in ("true", "1", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(x) for x in value.replace(" ", "").split(",") if x)
    return value.strip()


def parse_config(text: str) -> PipelineConfig:
    cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string("[pipeline]\n" + text)
    defaults = {f.name: f.default for f in fields(PipelineConfig)}
    kw = {}
    for key, value in cp["pipeline"].items():
        if key not in defaults:
            raise ValueError(f"unknown config key {key!r}")
        try:
            kw[key] = _convert(value, defaults[key])
        except ValueError as e:
            raise ValueError(f"config key {key!r}: {e}") from None
    return PipelineConfig(**kw)


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())
