"""Corruption statistics and logical fault maps."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import LengthMismatch, ManifestMismatch
from .faults import FaultMask
from .formats import FormatKind
from .store import WeightStore, decode_raw, nbytes_for

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def _u8(data) -> np.ndarray:
    return np.frombuffer(bytes(data), dtype=np.uint8)


def changed_bits(original: bytes, corrupted: bytes) -> int:
    if len(original) != len(corrupted):
        raise LengthMismatch(f"{len(original)} != {len(corrupted)} bytes")
    return int(_POPCOUNT[_u8(original) ^ _u8(corrupted)].sum())


def bit_error_rate(original: bytes, corrupted: bytes) -> float:
    """Changed bits over total bits."""
    n = changed_bits(original, corrupted)
    if len(original) == 0:
        raise LengthMismatch("BER of an empty buffer is undefined")
    return n / (8 * len(original))


def feff_fraction(data: bytes) -> float:
    """Fraction of all bytes equal to 0xFE or 0xFF."""
    b = _u8(data)
    if b.size == 0:
        raise ValueError("empty buffer")
    return float(np.count_nonzero(b >= 0xFE)) / b.size


@dataclass
class CorruptionReport:
    ber: float
    feff_fraction: float
    pre_range: tuple[float, float] | None
    post_range: tuple[float, float] | None
    range_expansion: float | None
    nan_fraction: float | None = None
    inf_fraction: float | None = None
    num_weights: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        for k in ("pre_range", "post_range"):
            if d[k] is not None:
                d[k] = list(d[k])
        # FP-only statistics are omitted for integer stores
        return {k: v for k, v in d.items() if v is not None or k not in ("nan_fraction", "inf_fraction")}

    def csv_row(self) -> dict:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return {
            "ber": fmt(self.ber),
            "feff_fraction": fmt(self.feff_fraction),
            "nan_fraction": fmt(self.nan_fraction),
            "inf_fraction": fmt(self.inf_fraction),
            "pre_min": fmt(self.pre_range and self.pre_range[0]),
            "pre_max": fmt(self.pre_range and self.pre_range[1]),
            "post_min": fmt(self.post_range and self.post_range[0]),
            "post_max": fmt(self.post_range and self.post_range[1]),
            "range_expansion": fmt(self.range_expansion),
            "num_weights": str(self.num_weights),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        row = self.csv_row()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()


def finite_range(values: np.ndarray) -> tuple[float, float] | None:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return None
    return float(v.min()), float(v.max())


def range_expansion(pre: tuple[float, float] | None, post: tuple[float, float] | None) -> float | None:
    if pre is None or post is None:
        return None
    width = pre[1] - pre[0]
    if width <= 0:
        return None
    return (post[1] - post[0]) / width


def _window_elements(store: WeightStore, window: tuple[int, int] | None):
    """Yield (meta, first, last) element ranges whose bytes lie inside ``window``."""
    for t in store.tensors:
        if window is None:
            yield t, 0, t.num_elements
            continue
        lo, hi = max(window[0], t.byte_offset), min(window[1], t.byte_end)
        if lo >= hi:
            continue
        bits = t.format.bits
        first = -(-(lo - t.byte_offset) * 8 // bits)
        last = min(((hi - t.byte_offset) * 8) // bits, t.num_elements)
        if last > first:
            yield t, first, last


def decoded_weights(store: WeightStore, window: tuple[int, int] | None = None,
                    float_only: bool = False) -> np.ndarray:
    parts = []
    for t, first, last in _window_elements(store, window):
        if float_only and not t.format.is_float:
            continue
        flat = decode_raw(t, store.blob[t.byte_offset:t.byte_end]).ravel()
        parts.append(flat[first:last])
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.float32)


def fp_corruption_stats(store_pre: WeightStore, store_post: WeightStore,
                        window: tuple[int, int] | None = None) -> CorruptionReport:
    """Compare two stores with identical manifests.

    ``window`` restricts every statistic to a byte range (a campaign chunk);
    only weights whose bytes lie entirely inside it count. NaN/Inf fractions
    are reported only when the window holds FP weights.
    """
    if not store_pre.same_manifest(store_post):
        raise ManifestMismatch("stores have different manifests")
    lo, hi = window if window is not None else (0, len(store_pre.blob))
    pre_bytes, post_bytes = store_pre.blob[lo:hi], store_post.blob[lo:hi]
    pre = decoded_weights(store_pre, window)
    post = decoded_weights(store_post, window)
    fp_post = decoded_weights(store_post, window, float_only=True)
    nan_frac = inf_frac = None
    if fp_post.size:
        nan_frac = float(np.count_nonzero(np.isnan(fp_post))) / fp_post.size
        inf_frac = float(np.count_nonzero(np.isinf(fp_post))) / fp_post.size
    pre_r, post_r = finite_range(pre), finite_range(post)
    return CorruptionReport(
        ber=bit_error_rate(pre_bytes, post_bytes),
        feff_fraction=feff_fraction(post_bytes),
        pre_range=pre_r,
        post_range=post_r,
        range_expansion=range_expansion(pre_r, post_r),
        nan_fraction=nan_frac,
        inf_fraction=inf_frac,
        num_weights=int(post.size),
    )


def raw_report(original: bytes, corrupted: bytes) -> CorruptionReport:
    """Byte-level statistics when no manifest is available."""
    return CorruptionReport(bit_error_rate(original, corrupted), feff_fraction(corrupted),
                            None, None, None)


def single_tensor_store(blob: bytes, kind: "FormatKind | str") -> WeightStore:
    """Interpret a whole FP blob as one flat tensor (for manifest-less analysis)."""
    from .store import TensorMeta

    kind = FormatKind.parse(kind)
    if not kind.is_float:
        raise ValueError("integer blobs need a manifest for their scales")
    n = len(blob) * 8 // kind.bits
    return WeightStore(blob, (TensorMeta("blob", (n,), kind, 0, nbytes_for(n, kind)),))


@dataclass
class FaultMap:
    width: int
    height: int
    bytes_per_cell: int
    cells: np.ndarray  # (height, width) bool

    def density(self, row_start: int = 0, row_end: int | None = None) -> float:
        rows = self.cells[row_start:row_end]
        return float(rows.mean()) if rows.size else 0.0

    def to_pgm(self) -> bytes:
        header = f"P5\n{self.width} {self.height}\n255\n".encode()
        return header + (self.cells.astype(np.uint8) * 255).tobytes()

    def to_csv(self) -> str:
        rows, cols = np.nonzero(self.cells)
        lines = ["row,col"] + [f"{r},{c}" for r, c in zip(rows, cols)]
        return "\n".join(lines) + "\n"


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def render_fault_map(mask: FaultMask, width: int = 256, bytes_per_cell: int = 64) -> FaultMap:
    """Logical map: cell ``(r, c)`` covers bytes ``[(r*width+c)*bpc, ...+bpc)``."""
    if width <= 0 or bytes_per_cell <= 0:
        raise ValueError("width and bytes_per_cell must be positive")
    n_cells = -(-mask.target_len // bytes_per_cell)
    height = max(1, -(-n_cells // width))
    flat = np.zeros(height * width, dtype=bool)
    flat[mask.offsets // bytes_per_cell] = True
    return FaultMap(width, height, bytes_per_cell, flat.reshape(height, width))


def report_json(report: CorruptionReport) -> str:
    return json.dumps(report.to_json(), indent=2) + "\n"
