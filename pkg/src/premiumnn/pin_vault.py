"""PIN-sealed storage for a handful of model parameters.

The selected parameters are quantized, concatenated behind random padding
into one field element O, and stored as g = O^(1/PIN). Raising g to any PIN
yields some field element, which always decodes to in-range parameter values;
only the right PIN gives back O.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .field_crypto import FieldElement, FieldError, FieldParams, fe_pow, get_field, inv_mod_p

ROLES = ("conv_filter", "bn_gamma", "bn_beta", "fc_weight")
# role -> (layer kind, tensor name)
ROLE_TENSORS = {
    "conv_filter": ("conv2d", "weight"),
    "bn_gamma": ("batchnorm", "gamma"),
    "bn_beta": ("batchnorm", "beta"),
    "fc_weight": ("fully_connected", "weight"),
}

MAGIC = b"PVLT"
FORMAT_VERSION = 1
MAX_PIN_DIGITS = 16


class CoordinateError(LookupError):
    pass


class VaultFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ParamCoordinate:
    layer_index: int
    tensor_role: str
    index: tuple

    def __post_init__(self):
        if self.tensor_role not in ROLE_TENSORS:
            raise ValueError(f"unknown tensor role {self.tensor_role!r}")
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))

    def resolve(self, model):
        """Return (tensor, index) addressing this scalar in `model`."""
        if not 0 <= self.layer_index < len(model.layers):
            raise CoordinateError(f"layer {self.layer_index} does not exist")
        kind, name = ROLE_TENSORS[self.tensor_role]
        spec = model.layers[self.layer_index]
        if spec.kind != kind:
            raise CoordinateError(
                f"layer {self.layer_index} is {spec.kind}, role {self.tensor_role} needs {kind}"
            )
        t = model.params[self.layer_index][name]
        if len(self.index) != t.ndim or any(not 0 <= i < s for i, s in zip(self.index, t.shape)):
            raise CoordinateError(f"index {self.index} outside tensor of shape {t.shape}")
        return t, self.index

    def get(self, model) -> float:
        t, idx = self.resolve(model)
        return float(t[idx])

    def to_json(self):
        return {"layer": self.layer_index, "role": self.tensor_role, "index": list(self.index)}

    @classmethod
    def from_json(cls, d):
        return cls(int(d["layer"]), d["role"], tuple(d["index"]))


@dataclass(frozen=True)
class QuantSpec:
    lo: float
    hi: float
    bits: int = 8

    def __post_init__(self):
        if not 1 <= self.bits <= 16:
            raise ValueError(f"bits must be in [1, 16], got {self.bits}")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"need finite lo < hi, got ({self.lo}, {self.hi})")

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.levels


def quantize(v: float, q: QuantSpec) -> int:
    """Affine code of v, clamped to [lo, hi], ties rounded up. Exact rational arithmetic."""
    v = min(max(float(v), q.lo), q.hi)
    x = (Fraction(v) - Fraction(q.lo)) * q.levels / (Fraction(q.hi) - Fraction(q.lo))
    return min(int(x + Fraction(1, 2)), q.levels)


def dequantize(code: int, q: QuantSpec) -> float:
    if not 0 <= code <= q.levels:
        raise ValueError(f"code {code} outside [0, {q.levels}]")
    lo, hi = Fraction(q.lo), Fraction(q.hi)
    return float(lo + (hi - lo) * code / q.levels)


def pack(codes, q: QuantSpec, fp: FieldParams, rng) -> FieldElement:
    """O = pad | o1 | ... | on, o1 most significant; pad bits drawn from `rng`.

    `rng` is a numpy Generator. The pad is re-drawn while O is 0 or 1.
    """
    n = len(codes)
    width = n * q.bits
    if width > fp.l:
        raise ValueError(f"{n} codes of {q.bits} bits exceed the {fp.l}-bit field")
    body = 0
    for c in codes:
        if not 0 <= c <= q.levels:
            raise ValueError(f"code {c} does not fit in {q.bits} bits")
        body = (body << q.bits) | int(c)
    pad_bits = fp.l - width
    for _ in range(1000):
        pad = int.from_bytes(rng.bytes((pad_bits + 7) // 8), "little") & ((1 << pad_bits) - 1) if pad_bits else 0
        value = (pad << width) | body
        if value > 1:
            return FieldElement(value, fp)
        if pad_bits == 0:
            break
    raise ValueError("cannot build a packed element outside {0, 1}")


def unpack(O: FieldElement, n: int, bits: int) -> list:
    mask = (1 << bits) - 1
    v = O.value
    return [(v >> ((n - 1 - i) * bits)) & mask for i in range(n)]


@dataclass(frozen=True)
class Pin:
    digits: str

    def __post_init__(self):
        d = self.digits
        if not isinstance(d, str) or not 1 <= len(d) <= MAX_PIN_DIGITS or not d.isascii() or not d.isdigit():
            raise ValueError(f"a PIN is 1 to {MAX_PIN_DIGITS} decimal digits, got {d!r}")

    @property
    def value(self) -> int:
        # leading zeros do not change the exponent
        return int(self.digits)

    @classmethod
    def of(cls, pin) -> "Pin":
        if isinstance(pin, Pin):
            return pin
        if isinstance(pin, (int, np.integer)):
            return cls(str(int(pin)))
        return cls(str(pin))

    def __str__(self):
        return self.digits


def lock(O: FieldElement, pin, fp: FieldParams | None = None) -> FieldElement:
    """g = O^(1/PIN) in the multiplicative group."""
    fp = fp or O.field
    if O.is_zero():
        raise ValueError("0 is not in the multiplicative group")
    k = Pin.of(pin).value
    g = fe_pow(O, inv_mod_p(k, fp.p))
    assert fe_pow(g, k) == O
    return g


@dataclass(frozen=True)
class LockedVault:
    l: int
    g: FieldElement
    coords: tuple
    quant: QuantSpec
    pad_bits: int
    format_version: int = FORMAT_VERSION
    field: FieldParams = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        object.__setattr__(self, "field", get_field(self.l))
        n = len(self.coords)
        if n * self.quant.bits > self.l:
            raise ValueError(f"{n} parameters of {self.quant.bits} bits exceed {self.l} bits")
        if self.pad_bits != self.l - n * self.quant.bits:
            raise ValueError(f"pad_bits {self.pad_bits} != {self.l - n * self.quant.bits}")
        if len(set(self.coords)) != n:
            raise ValueError("duplicate parameter coordinates")
        if self.g.field.l != self.l:
            raise ValueError("g lives in a different field")
        if self.g.value in (0, 1):
            raise ValueError("g must be neither 0 nor 1")

    @property
    def n(self) -> int:
        return len(self.coords)


def make_vault(values, coords, pin, quant: QuantSpec, l: int = 521, rng=None) -> LockedVault:
    """Quantize, pack and lock `values` (parameter values at `coords`)."""
    if len(values) != len(coords):
        raise ValueError("values and coords differ in length")
    fp = get_field(l)
    rng = rng if rng is not None else np.random.default_rng()
    codes = [quantize(v, quant) for v in values]
    O = pack(codes, quant, fp, rng)
    g = lock(O, pin, fp)
    return LockedVault(l, g, tuple(coords), quant, l - len(coords) * quant.bits)


def unlock_codes(vault: LockedVault, pin) -> list:
    k = Pin.of(pin).value
    if k % vault.field.p == 0:
        raise ValueError(f"PIN is a multiple of 2^{vault.l} - 1")
    return unpack(fe_pow(vault.g, k), vault.n, vault.quant.bits)


def unlock(vault: LockedVault, pin) -> list:
    """Parameter values decoded from g^pin; in range for every PIN."""
    return [dequantize(c, vault.quant) for c in unlock_codes(vault, pin)]


def install(model, coords, values):
    """Copy of `model` with the given scalars overwritten."""
    if len(coords) != len(values):
        raise ValueError("coords and values differ in length")
    out = model.copy()
    for c, v in zip(coords, values):
        t, idx = c.resolve(out)
        t[idx] = np.float32(v)
    return out


def default_quant(model, coords, bits=8) -> QuantSpec:
    """Quantization range for a coordinate set.

    bn scales use [0, 0.4] widened to the observed range of the layers
    involved; other roles use the min/max of the tensors they live in.
    """
    lo, hi = np.inf, -np.inf
    for layer in sorted({(c.layer_index, c.tensor_role) for c in coords}):
        t, _ = ParamCoordinate(layer[0], layer[1], (0,) * _ndim(model, layer)).resolve(model)
        lo, hi = min(lo, float(t.min())), max(hi, float(t.max()))
    if coords and all(c.tensor_role == "bn_gamma" for c in coords):
        lo, hi = min(lo, 0.0), max(hi, 0.4)
    if not lo < hi:
        lo, hi = lo - 0.5, hi + 0.5
    return QuantSpec(lo, hi, bits)


def _ndim(model, layer):
    kind, name = ROLE_TENSORS[layer[1]]
    return model.params[layer[0]][name].ndim


# Binary format, little-endian:
#   magic "PVLT", u16 version, u16 l, u16 n, u8 bits, u8 reserved,
#   f64 lo, f64 hi, u16 pad_bits,
#   n x (u16 layer, u8 role, u8 rank, rank x u32 index),
#   g as ceil(l/8) bytes
_HEADER = struct.Struct("<4sHHHBBddH")
_COORD = struct.Struct("<HBB")


def save_vault(vault: LockedVault) -> bytes:
    q = vault.quant
    out = bytearray(_HEADER.pack(MAGIC, vault.format_version, vault.l, vault.n, q.bits, 0,
                                 q.lo, q.hi, vault.pad_bits))
    for c in vault.coords:
        out += _COORD.pack(c.layer_index, ROLES.index(c.tensor_role), len(c.index))
        out += struct.pack(f"<{len(c.index)}I", *c.index)
    out += vault.g.to_bytes()
    return bytes(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, size, what):
        if self.pos + size > len(self.data):
            raise VaultFormatError(f"truncated vault: missing {what}")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk


def load_vault(data: bytes) -> LockedVault:
    r = _Reader(bytes(data))
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise VaultFormatError(f"bad magic {magic!r}, not a vault file")
    (version,) = struct.unpack("<H", r.take(2, "version"))
    if version != FORMAT_VERSION:
        raise VaultFormatError(f"unsupported vault version {version}")
    l, n, bits, _reserved, lo, hi, pad_bits = struct.unpack(
        "<HHBBddH", r.take(_HEADER.size - 6, "header"))
    try:
        fp = get_field(l)
    except FieldError as e:
        raise VaultFormatError(str(e)) from None
    coords = []
    for i in range(n):
        layer, role, rank = _COORD.unpack(r.take(_COORD.size, f"coordinate {i}"))
        if role >= len(ROLES):
            raise VaultFormatError(f"coordinate {i}: unknown role code {role}")
        idx = struct.unpack(f"<{rank}I", r.take(4 * rank, f"coordinate {i} index"))
        coords.append(ParamCoordinate(layer, ROLES[role], idx))
    g_raw = r.take(fp.nbytes, "g")
    if r.pos != len(r.data):
        raise VaultFormatError(f"{len(r.data) - r.pos} trailing bytes after g")
    try:
        g = FieldElement.from_bytes(g_raw, fp)
        return LockedVault(l, g, tuple(coords), QuantSpec(lo, hi, bits), pad_bits, version)
    except (ValueError, FieldError) as e:
        raise VaultFormatError(f"invalid vault: {e}") from None


def write_vault(vault: LockedVault, path):
    from .tensor_nn._io import atomic_write_bytes

    atomic_write_bytes(path, save_vault(vault))


def read_vault(path) -> LockedVault:
    with open(path, "rb") as f:
        return load_vault(f.read())
