"""Weight blob + JSON manifest, and conversion between formats."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidQuant, ManifestMismatch, OutOfBounds, UnknownTensor
from .formats import (
    FormatKind,
    QuantParams,
    decode_fp_array,
    dequantize_array,
    encode_fp_array,
    fp_bytes_to_bits,
    pack_int4,
    quantize_array,
    symmetric_scales,
    unpack_int4,
)

SCALE_FLOOR = 2.0**-24


@dataclass(frozen=True)
class TensorMeta:
    name: str
    shape: tuple[int, ...]
    format: FormatKind
    byte_offset: int
    byte_length: int
    quant: QuantParams | None = None

    def __post_init__(self):
        if any(d <= 0 for d in self.shape):
            raise ValueError(f"{self.name}: shape entries must be positive, got {self.shape}")
        expected = nbytes_for(self.num_elements, self.format)
        if self.byte_length != expected:
            raise ValueError(f"{self.name}: byte_length {self.byte_length} != {expected}")
        if self.format.is_float and self.quant is not None:
            raise InvalidQuant(f"{self.name}: FP tensors carry no quantization parameters")
        if not self.format.is_float:
            if self.quant is None:
                raise InvalidQuant(f"{self.name}: {self.format.value} tensor needs quant parameters")
            if (self.quant.q_min, self.quant.q_max) != self.format.q_range:
                raise InvalidQuant(f"{self.name}: clamp bounds do not match {self.format.value}")

    @property
    def num_elements(self) -> int:
        return math.prod(self.shape)

    @property
    def byte_end(self) -> int:
        return self.byte_offset + self.byte_length

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "shape": list(self.shape),
            "format": self.format.value,
            "byte_offset": self.byte_offset,
            "byte_length": self.byte_length,
            "quant": None if self.quant is None else self.quant.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "TensorMeta":
        kind = FormatKind.parse(d["format"])
        quant = d.get("quant")
        return cls(
            name=d["name"],
            shape=tuple(int(x) for x in d["shape"]),
            format=kind,
            byte_offset=int(d["byte_offset"]),
            byte_length=int(d["byte_length"]),
            quant=None if quant is None else QuantParams.from_json(quant, kind),
        )


def nbytes_for(count: int, kind: FormatKind) -> int:
    return -(-count * kind.bits // 8)


@dataclass(frozen=True)
class WeightStore:
    """Raw little-endian blob plus an ordered tensor manifest.

    Tensors are stored front-to-back in network order and never overlap, so a
    byte offset in the blob maps to a position in the network.
    """

    blob: bytes
    tensors: tuple[TensorMeta, ...]

    def __post_init__(self):
        object.__setattr__(self, "blob", bytes(self.blob))
        object.__setattr__(self, "tensors", tuple(self.tensors))
        end = 0
        names = set()
        for t in self.tensors:
            if t.name in names:
                raise ValueError(f"duplicate tensor name {t.name!r}")
            names.add(t.name)
            if t.byte_offset < end:
                raise ValueError(f"{t.name}: tensors must be ascending and non-overlapping")
            end = t.byte_end
        if end > len(self.blob):
            raise OutOfBounds(f"manifest needs {end} bytes, blob has {len(self.blob)}")

    def __getitem__(self, name: str) -> TensorMeta:
        for t in self.tensors:
            if t.name == name:
                return t
        raise UnknownTensor(name)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tensors]

    @property
    def formats(self) -> set[FormatKind]:
        return {t.format for t in self.tensors}

    def with_blob(self, blob: bytes) -> "WeightStore":
        if len(blob) != len(self.blob):
            raise ManifestMismatch("replacement blob has a different length")
        return replace(self, blob=blob)

    def manifest_json(self) -> dict:
        return {"tensors": [t.to_json() for t in self.tensors]}

    def same_manifest(self, other: "WeightStore") -> bool:
        return self.tensors == other.tensors and len(self.blob) == len(other.blob)

    def save(self, manifest_path, blob_path) -> None:
        _atomic_write(Path(blob_path), self.blob)
        _atomic_write(Path(manifest_path), (json.dumps(self.manifest_json(), indent=2) + "\n").encode())

    @classmethod
    def load(cls, manifest_path, blob_path) -> "WeightStore":
        with open(manifest_path) as f:
            manifest = json.load(f)
        blob = Path(blob_path).read_bytes()
        return cls.from_manifest(manifest, blob)

    @classmethod
    def from_manifest(cls, manifest: dict, blob: bytes) -> "WeightStore":
        return cls(blob, tuple(TensorMeta.from_json(t) for t in manifest["tensors"]))


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _tensor_bytes(store: WeightStore, meta: TensorMeta) -> bytes:
    if meta.byte_end > len(store.blob):
        raise OutOfBounds(f"{meta.name}: blob truncated")
    return store.blob[meta.byte_offset:meta.byte_end]


def decode_raw(meta: TensorMeta, data: bytes) -> np.ndarray:
    """Decode one tensor's bytes to float32 in row-major ``meta.shape``."""
    n = meta.num_elements
    if len(data) < meta.byte_length:
        raise OutOfBounds(f"{meta.name}: need {meta.byte_length} bytes, got {len(data)}")
    if meta.format.is_float:
        out = decode_fp_array(fp_bytes_to_bits(data[:meta.byte_length], meta.format), meta.format)
    else:
        if meta.format is FormatKind.INT8:
            q = np.frombuffer(data[:n], dtype=np.int8).astype(np.int64)
        else:
            q = unpack_int4(data[:meta.byte_length], n)
        out = dequantize_array(q.reshape(meta.shape), meta.quant).astype(np.float32)
    return out.reshape(meta.shape)


def decode_tensor(store: WeightStore, name: str) -> np.ndarray:
    meta = store[name]
    return decode_raw(meta, _tensor_bytes(store, meta))


def encode_values(values: np.ndarray, kind: FormatKind, quant: QuantParams | None = None) -> bytes:
    values = np.asarray(values)
    if kind.is_float:
        le = "<u4" if kind is FormatKind.FP32 else "<u2"
        return encode_fp_array(values.ravel(), kind).astype(le).tobytes()
    q = quantize_array(values, quant)
    if kind is FormatKind.INT8:
        return q.astype(np.int8).tobytes()
    return pack_int4(q.ravel())


def build_store(tensors: list[tuple[str, np.ndarray]], kind: "FormatKind | str",
                align: int = 1, axis: int = 0) -> WeightStore:
    """Lay out named float tensors back to back in one format.

    Integer formats use symmetric per-channel scales along ``axis``.
    """
    kind = FormatKind.parse(kind)
    blob = bytearray()
    metas = []
    for name, values in tensors:
        values = np.asarray(values, dtype=np.float64)
        while len(blob) % align:
            blob.append(0)
        quant = None
        if not kind.is_float:
            quant = QuantParams.symmetric(kind, symmetric_scales(values, kind, axis, SCALE_FLOOR), axis)
        data = encode_values(values, kind, quant)
        metas.append(TensorMeta(name, tuple(values.shape), kind, len(blob), len(data), quant))
        blob += data
    return WeightStore(bytes(blob), tuple(metas))


def convert_store(store: WeightStore, target: "FormatKind | str") -> WeightStore:
    """Re-encode every tensor of an FP32 store into ``target``.

    This is the post-training quantization step: per-channel symmetric scales
    ``max|w| / q_max`` with a 2**-24 floor for all-zero channels.
    """
    target = FormatKind.parse(target)
    if store.formats != {FormatKind.FP32}:
        raise ValueError("source store must be pure FP32")
    return build_store([(t.name, decode_tensor(store, t.name)) for t in store.tensors], target)
