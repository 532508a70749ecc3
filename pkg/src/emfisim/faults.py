"""Byte-level fault masks: generation, application, and diffing.

A mask is a sorted set of (offset, op, value) records over a window of
``target_len`` bytes. ``op`` is XOR (flip the given bits) or SET (overwrite
the byte). All generators draw from :mod:`emfisim.rng`, so a mask is fully
determined by its parameters and seed.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import LengthMismatch, OutOfBounds

MiB = 1 << 20


class FaultOp(enum.IntEnum):
    XOR = 0
    SET = 1


@dataclass(frozen=True)
class FaultRecord:
    offset: int
    op: FaultOp
    value: int

    def __post_init__(self):
        if not 0 <= self.value <= 0xFF:
            raise ValueError("fault value must be a byte")
        if self.op is FaultOp.XOR and self.value == 0:
            raise ValueError("XOR with 0 is a no-op record")


class FaultMask:
    """Immutable mask stored column-wise (offsets, ops, values)."""

    __slots__ = ("offsets", "ops", "values", "target_len")

    def __init__(self, offsets, ops, values, target_len: int):
        offsets = np.asarray(offsets, dtype=np.int64).ravel()
        ops = np.asarray(ops, dtype=np.uint8).ravel()
        values = np.asarray(values, dtype=np.uint8).ravel()
        if not (offsets.size == ops.size == values.size):
            raise ValueError("offsets, ops and values must have equal length")
        if offsets.size:
            if np.any(np.diff(offsets) <= 0):
                raise ValueError("offsets must be strictly increasing")
            if offsets[0] < 0 or offsets[-1] >= target_len:
                raise OutOfBounds("record offset outside the mask window")
            if np.any(ops > FaultOp.SET):
                raise ValueError("unknown fault op")
            if np.any((ops == FaultOp.XOR) & (values == 0)):
                raise ValueError("XOR with 0 is a no-op record")
        for a in (offsets, ops, values):
            a.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "ops", ops)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "target_len", int(target_len))

    def __setattr__(self, name, value):
        raise AttributeError("FaultMask is immutable")

    @classmethod
    def empty(cls, target_len: int) -> "FaultMask":
        return cls([], [], [], target_len)

    @classmethod
    def from_records(cls, records, target_len: int) -> "FaultMask":
        records = sorted(records, key=lambda r: r.offset)
        return cls([r.offset for r in records], [int(r.op) for r in records],
                   [r.value for r in records], target_len)

    def __len__(self) -> int:
        return int(self.offsets.size)

    @property
    def records(self) -> list[FaultRecord]:
        return [FaultRecord(int(o), FaultOp(int(p)), int(v))
                for o, p, v in zip(self.offsets, self.ops, self.values)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FaultMask):
            return NotImplemented
        return (self.target_len == other.target_len
                and np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.ops, other.ops)
                and np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"FaultMask({len(self)} records, target_len={self.target_len})"

    def corrupted_fraction(self, start: int = 0, end: int | None = None) -> float:
        """Fraction of bytes in ``[start, end)`` carrying a record."""
        end = self.target_len if end is None else end
        if end <= start:
            return 0.0
        lo, hi = np.searchsorted(self.offsets, [start, end])
        return float(hi - lo) / (end - start)

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        names = {FaultOp.XOR: "xor", FaultOp.SET: "set"}
        return {
            "target_len": self.target_len,
            "records": [{"offset": int(o), "op": names[FaultOp(int(p))], "value": int(v)}
                        for o, p, v in zip(self.offsets, self.ops, self.values)],
        }

    @classmethod
    def from_json(cls, d: dict) -> "FaultMask":
        ops = {"xor": FaultOp.XOR, "set": FaultOp.SET}
        recs = d["records"]
        return cls([r["offset"] for r in recs], [ops[r["op"]] for r in recs],
                   [r["value"] for r in recs], int(d["target_len"]))

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load_json(cls, path) -> "FaultMask":
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_binary(self) -> bytes:
        """Compact form: 6-byte little-endian records (u32 offset, u8 op, u8 value)."""
        rec = np.zeros(len(self), dtype=[("offset", "<u4"), ("op", "u1"), ("value", "u1")])
        if len(self) and self.offsets[-1] >= 1 << 32:
            raise OutOfBounds("binary mask offsets are limited to 32 bits")
        rec["offset"], rec["op"], rec["value"] = self.offsets, self.ops, self.values
        return rec.tobytes()

    @classmethod
    def from_binary(cls, data: bytes, target_len: int) -> "FaultMask":
        if len(data) % 6:
            raise ValueError("binary mask length is not a multiple of 6")
        rec = np.frombuffer(data, dtype=[("offset", "<u4"), ("op", "u1"), ("value", "u1")])
        return cls(rec["offset"].astype(np.int64), rec["op"], rec["value"], target_len)


# -- generators ----------------------------------------------------------------

_STREAM_BITFLIP = 1
_STREAM_BYTESET = 2
_STREAM_ROW_ACTIVE = 3
_STREAM_ROW_JITTER = 4
_STREAM_ROW_FF = 5

_BITFLIP_BLOCK = 1 << 22  # bits per block, bounds peak memory


def gen_random_bitflips(length: int, ber: float, seed: int) -> FaultMask:
    """Flip each of the ``8*length`` bits independently with probability ``ber``.

    Bit ``k`` of byte ``i`` uses draw ``8*i + k`` of the stream.
    """
    if not 0.0 <= ber <= 1.0:
        raise ValueError("ber must lie in [0, 1]")
    if ber == 0.0 or length == 0:
        return FaultMask.empty(length)
    threshold = np.uint64(min(int(ber * 2.0**53), 1 << 53))
    nbits = 8 * length
    parts = []
    for start in range(0, nbits, _BITFLIP_BLOCK):
        n = min(_BITFLIP_BLOCK, nbits - start)
        u = rng.random_u64(seed, _STREAM_BITFLIP, n, start) >> np.uint64(11)
        parts.append(np.packbits(u < threshold, bitorder="little"))
    xor = np.concatenate(parts)
    offsets = np.flatnonzero(xor)
    return FaultMask(offsets, np.full(offsets.size, FaultOp.XOR), xor[offsets], length)


def gen_byte_set(length: int, fraction: float, value: int, seed: int) -> FaultMask:
    """SET ``floor(fraction*length)`` distinct, uniformly chosen bytes to ``value``.

    Offsets are the ones with the smallest random keys (ties by offset), which
    is a uniform sample without replacement.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    count = math.floor(fraction * length)
    if count == 0:
        return FaultMask.empty(length)
    keys = rng.random_u64(seed, _STREAM_BYTESET, length)
    chosen = np.sort(np.argsort(keys, kind="stable")[:count])
    return FaultMask(chosen, np.full(count, FaultOp.SET), np.full(count, value), length)


@dataclass(frozen=True)
class EmfiPatternParams:
    """Geometry of the periodic EMFI corruption pattern.

    Each ``row_period`` bytes may hold one row of ``row_len`` bytes at a
    jittered start. Active rows alternate between all-``fe_value`` rows and
    rows repeating ``alt_pair`` (even offsets get ``alt_pair[0]``). A row's
    probability of being active is chosen so the expected corrupted-byte
    fraction is ``target_rate`` before ``boundary_offset`` and
    ``post_boundary_rate`` after it. Inside ``fe_value`` rows each byte is
    independently written as 0xFF with probability ``ff_prob``.
    """

    window_len: int = 4 * MiB
    boundary_offset: int = 2 * MiB
    row_len: int = 16
    row_period: int = 64
    fe_value: int = 0xFE
    alt_pair: tuple[int, int] = (0x00, 0x3C)
    target_rate: float = 0.15
    post_boundary_rate: float = 0.01
    ff_prob: float = 0.3
    seed: int = 21

    def __post_init__(self):
        object.__setattr__(self, "alt_pair", tuple(int(v) for v in self.alt_pair))
        if not 0 < self.row_len <= self.row_period <= self.window_len:
            raise ValueError("need 0 < row_len <= row_period <= window_len")
        if not 0 <= self.boundary_offset <= self.window_len:
            raise ValueError("boundary_offset must lie inside the window")
        for name in ("target_rate", "post_boundary_rate", "ff_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not all(0 <= v <= 0xFF for v in (self.fe_value, *self.alt_pair)) or len(self.alt_pair) != 2:
            raise ValueError("fe_value and alt_pair must be bytes")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def duty(self) -> float:
        return self.row_len / self.row_period

    def scaled_to(self, window_len: int, seed: int | None = None) -> "EmfiPatternParams":
        """Same geometry on a different window, boundary kept at the same ratio."""
        boundary = window_len * self.boundary_offset // self.window_len
        row_period = min(self.row_period, window_len)
        row_len = min(self.row_len, row_period)
        return EmfiPatternParams(window_len, boundary, row_len, row_period, self.fe_value,
                                 self.alt_pair, self.target_rate, self.post_boundary_rate,
                                 self.ff_prob, self.seed if seed is None else seed)

    def to_json(self) -> dict:
        d = asdict(self)
        d["alt_pair"] = list(self.alt_pair)
        return d


def gen_emfi_pattern(p: EmfiPatternParams) -> FaultMask:
    n_periods = -(-p.window_len // p.row_period)
    period_start = np.arange(n_periods, dtype=np.int64) * p.row_period
    jitter = rng.random_below(p.seed, _STREAM_ROW_JITTER, n_periods, p.row_period - p.row_len + 1)
    row_start = period_start + jitter
    rate = np.where(row_start < p.boundary_offset, p.target_rate, p.post_boundary_rate)
    activation = np.minimum(rate / p.duty, 1.0)
    active = rng.random_uniform(p.seed, _STREAM_ROW_ACTIVE, n_periods) < activation
    row_start = row_start[active]
    is_fe_row = np.arange(row_start.size) % 2 == 0

    offs = (row_start[:, None] + np.arange(p.row_len, dtype=np.int64)[None, :])
    fe = np.broadcast_to(is_fe_row[:, None], offs.shape)
    # 0xFF draws are indexed by absolute byte offset, independent of row order
    ff = rng.random_uniform(p.seed, _STREAM_ROW_FF, p.window_len)
    offs = offs.ravel()
    fe = fe.ravel()
    keep = offs < p.window_len
    offs, fe = offs[keep], fe[keep]
    alt = np.where(offs % 2 == 0, p.alt_pair[0], p.alt_pair[1])
    fe_vals = np.where(ff[offs] < p.ff_prob, 0xFF, p.fe_value)
    values = np.where(fe, fe_vals, alt)
    return FaultMask(offs, np.full(offs.size, FaultOp.SET), values, p.window_len)


# -- application ---------------------------------------------------------------

def apply_mask(blob: bytes, mask: FaultMask, base_offset: int = 0) -> bytes:
    if base_offset < 0 or base_offset + mask.target_len > len(blob):
        raise OutOfBounds(f"mask window [{base_offset}, {base_offset + mask.target_len}) "
                          f"exceeds blob of {len(blob)} bytes")
    out = np.frombuffer(blob, dtype=np.uint8).copy()
    pos = mask.offsets + base_offset
    is_set = mask.ops == FaultOp.SET
    out[pos[is_set]] = mask.values[is_set]
    out[pos[~is_set]] ^= mask.values[~is_set]
    return out.tobytes()


def diff_to_mask(original: bytes, corrupted: bytes) -> FaultMask:
    if len(original) != len(corrupted):
        raise LengthMismatch(f"{len(original)} != {len(corrupted)} bytes")
    x = np.frombuffer(original, dtype=np.uint8) ^ np.frombuffer(corrupted, dtype=np.uint8)
    offsets = np.flatnonzero(x)
    return FaultMask(offsets, np.full(offsets.size, FaultOp.XOR), x[offsets], len(original))


# -- fault-model selection (used by campaign specs and the CLI) ---------------

@dataclass(frozen=True)
class FaultModel:
    """A named generator plus its parameters; ``make(window, seed)`` builds a mask."""

    kind: str = "emfi"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("emfi", "bitflip", "byteset", "none"):
            raise ValueError(f"unknown fault model {self.kind!r}")
        if self.kind == "emfi":
            self.emfi_params(1 << 12, 0)  # validates keys and ranges
        elif self.kind == "bitflip" and not 0 <= self.params.get("ber", 0.0) <= 1:
            raise ValueError("ber must lie in [0, 1]")
        elif self.kind == "byteset" and not 0 <= self.params.get("fraction", 0.0) <= 1:
            raise ValueError("fraction must lie in [0, 1]")

    def emfi_params(self, window_len: int, seed: int) -> EmfiPatternParams:
        extra = {k: v for k, v in self.params.items() if k != "seed"}
        base = EmfiPatternParams(**extra)
        return base.scaled_to(window_len, seed)

    def make(self, window_len: int, seed: int) -> FaultMask:
        if self.kind == "none":
            return FaultMask.empty(window_len)
        if self.kind == "bitflip":
            return gen_random_bitflips(window_len, float(self.params.get("ber", 0.0)), seed)
        if self.kind == "byteset":
            return gen_byte_set(window_len, float(self.params.get("fraction", 0.0)),
                                int(self.params.get("value", 0xFF)), seed)
        return gen_emfi_pattern(self.emfi_params(window_len, seed))

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_json(cls, d: dict) -> "FaultModel":
        d = dict(d)
        kind = d.pop("kind", "emfi")
        if "alt_pair" in d:
            d["alt_pair"] = tuple(d["alt_pair"])
        return cls(kind, d)
