"""Arithmetic in binary fields GF(2^l) whose multiplicative group has prime order.

Elements are stored as Python ints: bit i is the coefficient of x^i.  Only
Mersenne exponents l are supported, so p = 2^l - 1 is prime and every element
other than 0 and 1 generates the whole multiplicative group.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

# Exponents l for which 2^l - 1 is prime, up to the largest degree we ship.
MERSENNE_EXPONENTS = frozenset({2, 3, 5, 7, 13, 17, 19, 31, 61, 89, 107, 127, 521})

SUPPORTED_DEGREES = (5, 7, 13, 17, 19, 31, 61, 89, 107, 127, 521)

# Reduction polynomials as tuples of exponents with a nonzero coefficient.
# Each entry is confirmed by verify_field_params in the test suite.
DEFAULT_POLYS = {
    5: (5, 2, 0),
    7: (7, 1, 0),
    13: (13, 4, 3, 1, 0),
    17: (17, 3, 0),
    19: (19, 5, 2, 1, 0),
    31: (31, 3, 0),
    61: (61, 5, 2, 1, 0),
    89: (89, 38, 0),
    107: (107, 9, 7, 4, 0),
    127: (127, 1, 0),
    521: (521, 32, 0),
}


class FieldError(ValueError):
    """Raised on mismatched fields or malformed field parameters."""


class InvalidPinError(ValueError):
    """Raised when an exponent is not invertible modulo the group order."""


def poly_from_exponents(exponents) -> int:
    v = 0
    for e in exponents:
        v ^= 1 << e
    return v


# Byte -> byte tables spreading a nibble's bits to the even bit positions.
_SPREAD_LO = bytes(
    sum(((b >> i) & 1) << (2 * i) for i in range(4)) for b in range(256)
)
_SPREAD_HI = bytes(
    sum(((b >> (i + 4)) & 1) << (2 * i) for i in range(4)) for b in range(256)
)


def clmul(a: int, b: int) -> int:
    """Carry-less product of two GF(2) polynomials, 4 bits of b at a time."""
    if a == 0 or b == 0:
        return 0
    t = [0] * 16
    t[1] = a
    for k in range(2, 16, 2):
        t[k] = t[k >> 1] << 1
        t[k + 1] = t[k] ^ a
    r = 0
    shift = (b.bit_length() + 3) & ~3
    while shift:
        shift -= 4
        r = (r << 4) ^ t[(b >> shift) & 15]
    return r


def clsquare(a: int) -> int:
    """Square of a GF(2) polynomial: interleave zeros between the bits."""
    if a == 0:
        return 0
    n = (a.bit_length() + 7) // 8
    raw = a.to_bytes(n, "little")
    out = bytearray(2 * n)
    out[0::2] = raw.translate(_SPREAD_LO)
    out[1::2] = raw.translate(_SPREAD_HI)
    return int.from_bytes(out, "little")


def poly_mod(a: int, m: int) -> int:
    """Remainder of a modulo m by plain long division (any m != 0)."""
    dm = m.bit_length() - 1
    while a.bit_length() - 1 >= dm:
        a ^= m << (a.bit_length() - 1 - dm)
    return a


def poly_gcd(a: int, b: int) -> int:
    while b:
        a, b = b, poly_mod(a, b)
    return a


def _mulmod(a: int, b: int, m: int) -> int:
    return poly_mod(clmul(a, b), m)


@dataclass(frozen=True)
class FieldParams:
    """GF(2^l) with a fixed reduction polynomial; p = 2^l - 1 is the group order."""

    l: int
    reduction_poly: int

    def __post_init__(self):
        if self.l < 1:
            raise FieldError(f"field degree must be positive, got {self.l}")
        if self.reduction_poly.bit_length() - 1 != self.l:
            raise FieldError(
                f"reduction polynomial has degree {self.reduction_poly.bit_length() - 1},"
                f" expected {self.l}"
            )

    @property
    def p(self) -> int:
        return (1 << self.l) - 1

    @property
    def nbytes(self) -> int:
        return (self.l + 7) // 8

    @property
    def _tail(self) -> tuple:
        return _tail_terms(self.reduction_poly, self.l)

    def reduce(self, v: int) -> int:
        l = self.l
        mask = self.p
        tail = self._tail
        while v >> l:
            hi = v >> l
            v &= mask
            for t in tail:
                v ^= hi << t
        return v

    def mul(self, a: int, b: int) -> int:
        return self.reduce(clmul(a, b))

    def square(self, a: int) -> int:
        return self.reduce(clsquare(a))

    def pow(self, a: int, e: int) -> int:
        if e < 0:
            raise ValueError("exponent must be non-negative")
        if e == 0:
            return 1
        if a == 0:
            return 0
        e %= self.p
        if e == 0:
            return 1
        r = a
        if self.l <= 64:
            # small fields: a table costs more than it saves
            for i in range(e.bit_length() - 2, -1, -1):
                r = self.square(r)
                if (e >> i) & 1:
                    r = self.mul(r, a)
            return r
        # left-to-right binary method; the multiplier is always `a`, so its
        # 8-bit multiple table is built once
        table = _byte_table(a)
        for i in range(e.bit_length() - 2, -1, -1):
            r = self.square(r)
            if (e >> i) & 1:
                r = self.reduce(_table_mul(table, r))
        return r

    def element(self, value: int) -> "FieldElement":
        return FieldElement(value, self)

    def zero(self) -> "FieldElement":
        return FieldElement(0, self)

    def one(self) -> "FieldElement":
        return FieldElement(1, self)


@lru_cache(maxsize=None)
def _tail_terms(poly: int, l: int) -> tuple:
    return tuple(i for i in range(l) if (poly >> i) & 1)


def _byte_table(a: int) -> list:
    t = [0] * 256
    t[1] = a
    for k in range(2, 256, 2):
        t[k] = t[k >> 1] << 1
        t[k + 1] = t[k] ^ a
    return t


def _table_mul(table: list, b: int) -> int:
    r = 0
    shift = (b.bit_length() + 7) & ~7
    while shift:
        shift -= 8
        r = (r << 8) ^ table[(b >> shift) & 255]
    return r


@dataclass(frozen=True)
class FieldElement:
    value: int
    field: FieldParams

    def __post_init__(self):
        if not 0 <= self.value <= self.field.p:
            raise FieldError(f"value does not fit in {self.field.l} bits")

    def _check(self, other: "FieldElement"):
        if not isinstance(other, FieldElement):
            return NotImplemented
        if other.field.l != self.field.l or other.field.reduction_poly != self.field.reduction_poly:
            raise FieldError(
                f"mismatched fields: GF(2^{self.field.l}) vs GF(2^{other.field.l})"
            )

    def __add__(self, other: "FieldElement") -> "FieldElement":
        return fe_add(self, other)

    __sub__ = __add__

    def __mul__(self, other: "FieldElement") -> "FieldElement":
        return fe_mul(self, other)

    def __pow__(self, e: int) -> "FieldElement":
        return fe_pow(self, e)

    def is_zero(self) -> bool:
        return self.value == 0

    def is_one(self) -> bool:
        return self.value == 1

    @property
    def bits(self) -> list:
        return [(self.value >> i) & 1 for i in range(self.field.l)]

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(self.field.nbytes, "little")

    @classmethod
    def from_bytes(cls, data: bytes, field: FieldParams) -> "FieldElement":
        if len(data) != field.nbytes:
            raise FieldError(f"expected {field.nbytes} bytes, got {len(data)}")
        return cls(int.from_bytes(data, "little"), field)

    def __repr__(self):
        return f"FieldElement(0x{self.value:x}, l={self.field.l})"


def fe_add(a: FieldElement, b: FieldElement) -> FieldElement:
    a._check(b)
    return FieldElement(a.value ^ b.value, a.field)


def fe_mul(a: FieldElement, b: FieldElement) -> FieldElement:
    a._check(b)
    return FieldElement(a.field.mul(a.value, b.value), a.field)


def fe_pow(a: FieldElement, e: int) -> FieldElement:
    return FieldElement(a.field.pow(a.value, int(e)), a.field)


def inv_mod_p(k: int, p: int) -> int:
    """Inverse of k modulo p by the extended Euclidean algorithm."""
    k %= p
    if k == 0:
        raise InvalidPinError(f"value is a multiple of {p} and has no inverse")
    r0, r1 = p, k
    s0, s1 = 0, 1
    while r1:
        q = r0 // r1
        r0, r1 = r1, r0 - q * r1
        s0, s1 = s1, s0 - q * s1
    if r0 != 1:
        raise InvalidPinError(f"{k} is not invertible modulo {p}")
    return s0 % p


def _is_prime_trial(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    i = 3
    while i * i <= n:
        if n % i == 0:
            return False
        i += 2
    return True


def _prime_factors(n: int) -> list:
    out = []
    d = 2
    while d * d <= n:
        if n % d == 0:
            out.append(d)
            while n % d == 0:
                n //= d
        d += 1
    if n > 1:
        out.append(n)
    return out


def is_irreducible(poly: int) -> bool:
    """Rabin's test over GF(2)."""
    l = poly.bit_length() - 1
    if l < 1:
        return False
    x = 0b10
    # x^(2^l) mod poly, plus the intermediate x^(2^(l/q)) values
    powers = {}
    v = x
    for i in range(1, l + 1):
        v = poly_mod(clsquare(v), poly)
        powers[i] = v
    if powers[l] != poly_mod(x, poly):
        return False
    for q in _prime_factors(l):
        d = l // q
        h = powers[d] ^ poly_mod(x, poly)
        if poly_gcd(poly, h) != 1:
            return False
    return True


def verify_field_params(fp: FieldParams) -> bool:
    l, f = fp.l, fp.reduction_poly
    if l <= 31:
        prime = _is_prime_trial(fp.p)
    else:
        prime = l in MERSENNE_EXPONENTS
    if not prime:
        return False
    if f.bit_length() - 1 != l or not (f & 1):
        return False
    return is_irreducible(f)


@lru_cache(maxsize=None)
def get_field(l: int) -> FieldParams:
    """Default field of degree l from the shipped table."""
    if l not in DEFAULT_POLYS:
        raise FieldError(
            f"unsupported field degree {l}; choose one of {list(SUPPORTED_DEGREES)}"
        )
    return FieldParams(l, poly_from_exponents(DEFAULT_POLYS[l]))
