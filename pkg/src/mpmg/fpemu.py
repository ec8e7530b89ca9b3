"""Emulated p-bit floating-point arithmetic carried in IEEE binary64.

Every value lives in a float64 array. An operation in ``PrecisionSpec(p)``
computes the exact result's nearest p-bit neighbour (ties to even), with an
unbounded exponent range. Sums, products and quotients are first reduced to
binary64 with round-to-odd (via error-free transformations), which makes the
second rounding to p <= 51 bits exact; see Boldo & Melquiond, "Emulation of
FMA and correctly-rounded sums: proved algorithms using rounding to odd".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CARRIER_BITS = 53

_ALIASES = {"fp64": 53, "fp32": 24, "fp16": 11, "bf16": 8}

# Veltkamp splitting constant for binary64.
_SPLIT = 134217729.0  # 2**27 + 1


@dataclass(frozen=True)
class PrecisionSpec:
    """A floating-point format with ``significand_bits`` bits of significand.

    The unit roundoff is ``2**-significand_bits``. ``p = 53`` is the carrier
    format itself and every rounding in it is the identity.
    """

    significand_bits: int
    unit_roundoff: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = self.significand_bits
        if isinstance(p, bool) or not isinstance(p, (int, np.integer)):
            raise TypeError(f"significand_bits must be an int, got {p!r}")
        if not 2 <= p <= CARRIER_BITS:
            raise ValueError(
                f"significand_bits must lie in [2, {CARRIER_BITS}], got {p}")
        object.__setattr__(self, "significand_bits", int(p))
        object.__setattr__(self, "unit_roundoff", math.ldexp(1.0, -int(p)))

    @property
    def p(self) -> int:
        return self.significand_bits

    @property
    def eps(self) -> float:
        return self.unit_roundoff

    @property
    def is_carrier(self) -> bool:
        return self.significand_bits == CARRIER_BITS

    def __str__(self):
        return f"p{self.significand_bits}"


FP64 = PrecisionSpec(53)
FP32 = PrecisionSpec(24)
FP16 = PrecisionSpec(11)
BF16 = PrecisionSpec(8)
CARRIER = FP64


def as_precision(value) -> PrecisionSpec:
    """Coerce an int, alias string ("fp32", ...) or PrecisionSpec."""
    if isinstance(value, PrecisionSpec):
        return value
    if isinstance(value, str):
        key = value.strip().lower()
        if key in _ALIASES:
            return PrecisionSpec(_ALIASES[key])
        try:
            return PrecisionSpec(int(key))
        except ValueError:
            raise ValueError(f"unknown precision alias {value!r}") from None
    return PrecisionSpec(value)


@dataclass(frozen=True)
class PrecisionTriple:
    """High (eps-bar), working (eps) and low (eps-dot) precisions."""

    high: PrecisionSpec
    work: PrecisionSpec
    low: PrecisionSpec

    def __post_init__(self):
        if not (self.high.p >= self.work.p >= self.low.p):
            raise ValueError(
                "precision triple must satisfy high >= work >= low, got "
                f"{self.high.p}/{self.work.p}/{self.low.p}")

    @classmethod
    def parse(cls, cfg) -> "PrecisionTriple":
        if isinstance(cfg, PrecisionTriple):
            return cfg
        unknown = set(cfg) - {"high", "work", "low"}
        if unknown:
            raise ValueError(f"unknown precision keys: {sorted(unknown)}")
        return cls(as_precision(cfg.get("high", 53)),
                   as_precision(cfg.get("work", 53)),
                   as_precision(cfg.get("low", 53)))

    def to_dict(self):
        return {"high": self.high.p, "work": self.work.p, "low": self.low.p}


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite operand")


def _round_array(x: np.ndarray, p: int, mode: str) -> np.ndarray:
    m, e = np.frexp(x)
    s = np.ldexp(m, p)
    if mode == "nearest":
        s = np.rint(s)
    elif mode == "toward_zero":
        s = np.trunc(s)
    else:
        raise ValueError(f"unknown rounding mode {mode!r}")
    return np.ldexp(s, e - p)


def round_to(x, prec, mode: str = "nearest"):
    """Round ``x`` (scalar or array) to ``prec``.

    ``mode`` is ``"nearest"`` (ties to even, the default) or
    ``"toward_zero"``.
    """
    prec = as_precision(prec)
    scalar = np.ndim(x) == 0
    a = np.asarray(x, dtype=np.float64)
    _check_finite(a)
    if prec.is_carrier:
        out = a.copy()
    else:
        out = _round_array(a, prec.p, mode)
    return float(out) if scalar else out


def _two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def _split(a):
    c = _SPLIT * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


def _to_odd(s, direction):
    """Turn RN(exact) into RO(exact) given sign(exact - s)."""
    inexact = direction != 0
    if not np.any(inexact):
        return s
    even = (s.view(np.int64) & 1) == 0
    bump = inexact & even
    if not np.any(bump):
        return s
    target = np.where(direction > 0, np.inf, -np.inf)
    return np.where(bump, np.nextafter(s, target), s)


def _finish(s, direction, p):
    if p >= CARRIER_BITS:
        return s
    if p <= CARRIER_BITS - 2:
        s = _to_odd(s, direction)
    # p == 52 falls back to double rounding (no guard bit available).
    return _round_array(s, p, "nearest")


def _prep(x, y):
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    _check_finite(a)
    _check_finite(b)
    return np.broadcast_arrays(a, b)


def _out(r, x, y):
    if np.ndim(x) == 0 and np.ndim(y) == 0:
        return float(r)
    return r


def fl_add(x, y, prec):
    prec = as_precision(prec)
    a, b = _prep(x, y)
    if prec.is_carrier:
        return _out(a + b, x, y)
    s, err = _two_sum(a, b)
    return _out(_finish(s, np.sign(err), prec.p), x, y)


def fl_sub(x, y, prec):
    prec = as_precision(prec)
    a, b = _prep(x, y)
    if prec.is_carrier:
        return _out(a - b, x, y)
    s, err = _two_sum(a, -b)
    return _out(_finish(s, np.sign(err), prec.p), x, y)


def fl_mul(x, y, prec):
    prec = as_precision(prec)
    a, b = _prep(x, y)
    if prec.is_carrier:
        return _out(a * b, x, y)
    s, err = _two_prod(a, b)
    return _out(_finish(s, np.sign(err), prec.p), x, y)


def fl_div(x, y, prec):
    prec = as_precision(prec)
    a, b = _prep(x, y)
    if np.any(b == 0):
        raise ZeroDivisionError("division by zero in emulated arithmetic")
    q = a / b
    if prec.is_carrier:
        return _out(q, x, y)
    ph, pl = _two_prod(q, b)
    rem = (a - ph) - pl
    return _out(_finish(q, np.sign(rem) * np.sign(b), prec.p), x, y)


_OPS = {
    "+": fl_add, "add": fl_add,
    "-": fl_sub, "−": fl_sub, "sub": fl_sub,
    "*": fl_mul, "×": fl_mul, "mul": fl_mul,
    "/": fl_div, "÷": fl_div, "div": fl_div,
}


def fl_op(x, y, op: str, prec):
    """``round(x op y)`` in ``prec`` for op in ``+ - * /``.

    Works elementwise on arrays; scalars in give a float out.
    """
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown operation {op!r}") from None
    return fn(x, y, prec)


def dot(x, y, prec) -> float:
    """Left-to-right recursive dot product with every operation rounded."""
    prec = as_precision(prec)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size == 0:
        return 0.0
    prods = fl_mul(x, y, prec)
    if prec.is_carrier:
        acc = 0.0
        for v in prods.tolist():
            acc += v
        return acc + 0.0
    p = prec.p
    vals = prods.tolist()
    acc = vals[0]
    for v in vals[1:]:
        acc = _add_scalar(acc, v, p)
    return acc


def _add_scalar(a: float, b: float, p: int) -> float:
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    if err != 0.0 and p <= CARRIER_BITS - 2:
        m, e = math.frexp(s)
        if int(math.ldexp(m, CARRIER_BITS)) & 1 == 0:
            s = math.nextafter(s, math.inf if err > 0 else -math.inf)
    if s == 0.0:
        return s
    m, e = math.frexp(s)
    return math.ldexp(round(math.ldexp(m, p)), e - p)


def norm2(x, prec) -> float:
    """Euclidean norm: dot product in ``prec`` then a rounded square root."""
    s = dot(x, x, prec)
    return round_to(math.sqrt(s), prec)
