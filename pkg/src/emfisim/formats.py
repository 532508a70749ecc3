"""Bit-exact codecs for the four weight representations.

FP32/FP16 follow IEEE 754 binary32/binary16. INT8/INT4 are signed two's
complement integers produced by symmetric per-channel quantization, with INT4
packed two per byte, low nibble first. Every multi-byte scalar is
little-endian.

Scalar functions (``decode_fp``, ``encode_fp``, ``quantize``, ...) work on
Python numbers; the ``*_array`` variants are vectorized numpy versions of the
same bit manipulations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidQuant, InvalidReal, OutOfBounds


class FormatKind(enum.Enum):
    FP32 = "fp32"
    FP16 = "fp16"
    INT8 = "int8"
    INT4 = "int4"

    @property
    def bits(self) -> int:
        return _BITS[self]

    @property
    def is_float(self) -> bool:
        return self in (FormatKind.FP32, FormatKind.FP16)

    @property
    def q_range(self) -> tuple[int, int]:
        if self.is_float:
            raise ValueError(f"{self.value} has no integer range")
        return _QRANGE[self]

    @property
    def max_value(self) -> float:
        """Largest finite magnitude (FP) or largest integer (INT)."""
        if self.is_float:
            spec = _FP[self]
            return math.ldexp(2.0 - 2.0**-spec.mant_bits, spec.max_exp)
        return float(_QRANGE[self][1])

    @classmethod
    def parse(cls, name: "str | FormatKind") -> "FormatKind":
        if isinstance(name, FormatKind):
            return name
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown format {name!r}; expected one of fp32, fp16, int8, int4") from None


_BITS = {FormatKind.FP32: 32, FormatKind.FP16: 16, FormatKind.INT8: 8, FormatKind.INT4: 4}
_QRANGE = {FormatKind.INT8: (-128, 127), FormatKind.INT4: (-8, 7)}


@dataclass(frozen=True)
class _FpSpec:
    exp_bits: int
    mant_bits: int

    @property
    def width(self) -> int:
        return 1 + self.exp_bits + self.mant_bits

    @property
    def bias(self) -> int:
        return (1 << (self.exp_bits - 1)) - 1

    @property
    def exp_all_ones(self) -> int:
        return (1 << self.exp_bits) - 1

    @property
    def max_exp(self) -> int:
        return self.exp_all_ones - 1 - self.bias


_FP = {FormatKind.FP32: _FpSpec(8, 23), FormatKind.FP16: _FpSpec(5, 10)}


def _fp_spec(kind: FormatKind) -> _FpSpec:
    kind = FormatKind.parse(kind)
    if not kind.is_float:
        raise ValueError(f"{kind.value} is not a floating-point format")
    return _FP[kind]


class FpClass(enum.IntEnum):
    NORMAL = 0
    SUBNORMAL = 1
    ZERO = 2
    INF = 3
    NAN = 4


@dataclass(frozen=True)
class FpParts:
    sign: int
    biased_exponent: int
    mantissa: int
    cls: FpClass


def split_fp(bits: int, kind: FormatKind) -> FpParts:
    spec = _fp_spec(kind)
    if not 0 <= bits < (1 << spec.width):
        raise OutOfBounds(f"bit pattern {bits:#x} does not fit in {spec.width} bits")
    mant = bits & ((1 << spec.mant_bits) - 1)
    exp = (bits >> spec.mant_bits) & spec.exp_all_ones
    sign = bits >> (spec.width - 1)
    if exp == spec.exp_all_ones:
        cls = FpClass.NAN if mant else FpClass.INF
    elif exp == 0:
        cls = FpClass.SUBNORMAL if mant else FpClass.ZERO
    else:
        cls = FpClass.NORMAL
    return FpParts(sign, exp, mant, cls)


def decode_fp(bits: int, kind: FormatKind) -> tuple[float, FpParts]:
    """Decode an FP32/FP16 bit pattern. Every pattern decodes; nothing raises
    for in-width input."""
    spec = _fp_spec(kind)
    parts = split_fp(bits, kind)
    sign = -1.0 if parts.sign else 1.0
    if parts.cls is FpClass.NAN:
        return math.nan, parts
    if parts.cls is FpClass.INF:
        return sign * math.inf, parts
    if parts.cls is FpClass.NORMAL:
        significand = (1 << spec.mant_bits) | parts.mantissa
        exponent = parts.biased_exponent - spec.bias - spec.mant_bits
    else:
        # zero and subnormal share the fixed exponent 1 - bias
        significand = parts.mantissa
        exponent = 1 - spec.bias - spec.mant_bits
    return sign * math.ldexp(significand, exponent), parts


def _round_shift(m: int, shift: int) -> int:
    """m / 2**shift rounded to nearest, ties to even."""
    if shift <= 0:
        return m << -shift
    q = m >> shift
    rem = m - (q << shift)
    half = 1 << (shift - 1)
    if rem > half or (rem == half and q & 1):
        q += 1
    return q


def encode_fp(value: float, kind: FormatKind) -> int:
    """Round a real to the nearest FP32/FP16 pattern (ties to even).

    Magnitudes beyond the format's range become +/-Inf; NaN becomes the quiet
    NaN with the input's sign.
    """
    spec = _fp_spec(kind)
    value = float(value)
    sign = 1 if math.copysign(1.0, value) < 0 else 0
    sign_bit = sign << (spec.width - 1)
    inf_bits = spec.exp_all_ones << spec.mant_bits
    if math.isnan(value):
        return sign_bit | inf_bits | (1 << (spec.mant_bits - 1))
    if math.isinf(value):
        return sign_bit | inf_bits
    if value == 0.0:
        return sign_bit
    num, den = abs(value).as_integer_ratio()  # den is a power of two
    m, e = num, -(den.bit_length() - 1)  # |value| = m * 2**e exactly
    unbiased = m.bit_length() - 1 + e
    emin = 1 - spec.bias
    quantum = max(unbiased, emin) - spec.mant_bits
    r = _round_shift(m, quantum - e)
    if unbiased >= emin:
        # a rounding carry into 2**(mant_bits+1) correctly bumps the exponent
        field = ((unbiased + spec.bias - 1) << spec.mant_bits) + r
    else:
        # r == 2**mant_bits rolls over into the smallest normal
        field = r
    if field >= inf_bits:
        field = inf_bits
    return sign_bit | field


def _uint_dtype(kind: FormatKind):
    return np.uint32 if _fp_spec(kind).width == 32 else np.uint16


def classify_fp_array(bits: np.ndarray, kind: FormatKind) -> np.ndarray:
    """Vectorized FpClass codes (uint8) for an array of bit patterns."""
    spec = _fp_spec(kind)
    bits = np.asarray(bits).astype(np.uint64)
    mant = bits & np.uint64((1 << spec.mant_bits) - 1)
    exp = (bits >> np.uint64(spec.mant_bits)) & np.uint64(spec.exp_all_ones)
    out = np.full(bits.shape, FpClass.NORMAL, dtype=np.uint8)
    all_ones = exp == spec.exp_all_ones
    zero_exp = exp == 0
    out[all_ones & (mant != 0)] = FpClass.NAN
    out[all_ones & (mant == 0)] = FpClass.INF
    out[zero_exp & (mant != 0)] = FpClass.SUBNORMAL
    out[zero_exp & (mant == 0)] = FpClass.ZERO
    return out


def decode_fp_array(bits: np.ndarray, kind: FormatKind) -> np.ndarray:
    """Vectorized decode_fp; returns float32 (exact for both formats)."""
    spec = _fp_spec(kind)
    b = np.asarray(bits).astype(np.int64)
    mant = b & ((1 << spec.mant_bits) - 1)
    exp = (b >> spec.mant_bits) & spec.exp_all_ones
    neg = (b >> (spec.width - 1)) & 1
    normal = (exp != 0) & (exp != spec.exp_all_ones)
    significand = np.where(normal, mant | (1 << spec.mant_bits), mant)
    exponent = np.where(normal, exp, 1) - spec.bias - spec.mant_bits
    mag = np.ldexp(significand.astype(np.float64), exponent.astype(np.int32))
    special = exp == spec.exp_all_ones
    mag = np.where(special, np.where(mant != 0, np.nan, np.inf), mag)
    return np.where(neg == 1, -mag, mag).astype(np.float32)


def encode_fp_array(values: np.ndarray, kind: FormatKind) -> np.ndarray:
    """Vectorized encode_fp operating on the float64 bit fields directly."""
    spec = _fp_spec(kind)
    v = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    raw = v.view(np.uint64)
    sign = (raw >> np.uint64(63)).astype(np.int64)
    e64 = ((raw >> np.uint64(52)) & np.uint64(0x7FF)).astype(np.int64)
    m64 = (raw & np.uint64((1 << 52) - 1)).astype(np.int64)

    inf_bits = spec.exp_all_ones << spec.mant_bits
    emin = 1 - spec.bias
    # float64 subnormals are far below the smallest FP32/FP16 subnormal, so
    # treat them as zero (they round to +/-0 anyway).
    finite_nonzero = (e64 != 0) & (e64 != 0x7FF)
    m = m64 | (1 << 52)
    e = e64 - 1075  # value = m * 2**e
    unbiased = e64 - 1023
    quantum = np.maximum(unbiased, emin) - spec.mant_bits
    shift = np.clip(quantum - e, 1, 62)
    q = m >> shift
    rem = m - (q << shift)
    half = np.int64(1) << (shift - 1)
    q = q + ((rem > half) | ((rem == half) & ((q & 1) == 1))).astype(np.int64)
    # shifts past the clip leave nothing: m < 2**53 <= half-ulp
    q = np.where(quantum - e > 62, 0, q)
    normal_field = ((unbiased + spec.bias - 1) << spec.mant_bits) + q
    field = np.where(unbiased >= emin, normal_field, q)
    field = np.where(field >= inf_bits, inf_bits, field)
    field = np.where(finite_nonzero, field, 0)
    field = np.where((e64 == 0x7FF) & (m64 == 0), inf_bits, field)
    field = np.where((e64 == 0x7FF) & (m64 != 0), inf_bits | (1 << (spec.mant_bits - 1)), field)
    out = field | (sign << (spec.width - 1))
    return out.astype(_uint_dtype(kind))


@dataclass(frozen=True)
class QuantParams:
    """Per-channel affine parameters; ``zero_points`` are all 0 for the
    symmetric scheme used throughout."""

    axis: int
    scales: tuple[float, ...]
    zero_points: tuple[int, ...]
    q_min: int
    q_max: int

    def __post_init__(self):
        if len(self.scales) != len(self.zero_points):
            raise InvalidQuant("scales and zero_points differ in length")
        if not self.scales:
            raise InvalidQuant("at least one channel is required")
        if not all(s > 0 and math.isfinite(s) for s in self.scales):
            raise InvalidQuant("every scale must be positive and finite")
        if self.q_min >= self.q_max:
            raise InvalidQuant("q_min must be below q_max")

    @classmethod
    def symmetric(cls, kind: FormatKind, scales, axis: int = 0) -> "QuantParams":
        lo, hi = FormatKind.parse(kind).q_range
        scales = tuple(float(s) for s in scales)
        return cls(axis, scales, (0,) * len(scales), lo, hi)

    def bounds(self, channel: int) -> tuple[float, float]:
        s, z = self.scales[channel], self.zero_points[channel]
        return (self.q_min - z) * s, (self.q_max - z) * s

    def to_json(self) -> dict:
        return {"axis": self.axis, "scales": list(self.scales), "zero_points": list(self.zero_points)}

    @classmethod
    def from_json(cls, d: dict, kind: FormatKind) -> "QuantParams":
        lo, hi = FormatKind.parse(kind).q_range
        return cls(int(d["axis"]), tuple(float(s) for s in d["scales"]),
                   tuple(int(z) for z in d["zero_points"]), lo, hi)


def quantize(r: float, p: QuantParams, channel: int = 0) -> int:
    if not math.isfinite(r):
        raise InvalidReal(f"cannot quantize non-finite value {r!r}")
    s, z = p.scales[channel], p.zero_points[channel]
    q = round(r / s) + z  # Python round() is half-to-even
    return min(max(q, p.q_min), p.q_max)


def dequantize(q: int, p: QuantParams, channel: int = 0) -> float:
    if not p.q_min <= q <= p.q_max:
        raise InvalidQuant(f"{q} outside [{p.q_min}, {p.q_max}]")
    return (q - p.zero_points[channel]) * p.scales[channel]


def _channel_view(p: QuantParams, shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    if len(shape) == 0:
        raise InvalidQuant("quantized tensors need at least one dimension")
    bshape = [1] * len(shape)
    if len(p.scales) != 1:  # a single scale applies to the whole tensor
        if shape[p.axis] != len(p.scales):
            raise InvalidQuant(f"{len(p.scales)} scales for axis of size {shape[p.axis]}")
        bshape[p.axis] = len(p.scales)
    return (np.asarray(p.scales, dtype=np.float64).reshape(bshape),
            np.asarray(p.zero_points, dtype=np.int64).reshape(bshape))


def quantize_array(values: np.ndarray, p: QuantParams) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise InvalidReal("cannot quantize non-finite values")
    s, z = _channel_view(p, values.shape)
    q = np.rint(values / s).astype(np.int64) + z
    return np.clip(q, p.q_min, p.q_max)


def dequantize_array(q: np.ndarray, p: QuantParams) -> np.ndarray:
    """Dequantize to float64 (callers cast to working precision)."""
    q = np.asarray(q, dtype=np.int64)
    if q.size and (q.min() < p.q_min or q.max() > p.q_max):
        raise InvalidQuant(f"quantized values outside [{p.q_min}, {p.q_max}]")
    s, z = _channel_view(p, q.shape)
    return (q - z) * s


def symmetric_scales(weights: np.ndarray, kind: FormatKind, axis: int = 0,
                     floor: float = 2.0**-24) -> tuple[float, ...]:
    """max|w| per channel over q_max, floored so all-zero channels stay valid."""
    w = np.moveaxis(np.asarray(weights, dtype=np.float64), axis, 0)
    amax = np.abs(w.reshape(w.shape[0], -1)).max(axis=1)
    _, q_max = FormatKind.parse(kind).q_range
    scales = amax / q_max
    return tuple(float(max(s, floor)) for s in scales)


def pack_int4(values) -> bytes:
    v = np.asarray(values, dtype=np.int64).ravel()
    if v.size and (v.min() < -8 or v.max() > 7):
        raise InvalidQuant("INT4 values must lie in [-8, 7]")
    nib = (v & 0xF).astype(np.uint8)
    if nib.size % 2:
        nib = np.append(nib, np.uint8(0))
    return (nib[0::2] | (nib[1::2] << 4)).astype(np.uint8).tobytes()


def unpack_int4(data: bytes, count: int) -> np.ndarray:
    raw = np.frombuffer(bytes(data), dtype=np.uint8)
    if count < 0 or count > 2 * raw.size:
        raise OutOfBounds(f"{count} nibbles requested from {raw.size} bytes")
    nib = np.empty(2 * raw.size, dtype=np.int64)
    nib[0::2] = raw & 0x0F
    nib[1::2] = raw >> 4
    nib = nib[:count]
    return np.where(nib >= 8, nib - 16, nib)


def fp_bytes_to_bits(data: bytes, kind: FormatKind) -> np.ndarray:
    dtype = "<u4" if _fp_spec(kind).width == 32 else "<u2"
    return np.frombuffer(bytes(data), dtype=dtype)

