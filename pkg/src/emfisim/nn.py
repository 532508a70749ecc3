"""Small NaN-faithful CNN inference over a WeightStore.

All arithmetic runs in float32 after weights are decoded (dequantize-on-load
for INT8/INT4). Nothing sanitizes NaN or Inf: a corrupted exponent travels
through the network exactly as IEEE arithmetic dictates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .store import WeightStore, decode_tensor

LAYER_KINDS = ("conv2d", "dense", "relu", "maxpool2d", "flatten", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    weight: str | None = None
    bias: str | None = None
    stride: int = 1
    padding: int = 0
    size: int = 2  # pooling window

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv2d", "dense") and self.weight is None:
            raise ValueError(f"{self.kind} layer needs a weight tensor")

    def to_json(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("conv2d", "dense"):
            d["weight"], d["bias"] = self.weight, self.bias
        if self.kind == "conv2d":
            d["stride"], d["padding"] = self.stride, self.padding
        if self.kind == "maxpool2d":
            d["size"], d["stride"] = self.size, self.stride
        return d

    @classmethod
    def from_json(cls, d: dict) -> "LayerSpec":
        kind = d["kind"]
        stride = d.get("stride", d.get("size", 2) if kind == "maxpool2d" else 1)
        return cls(kind, d.get("weight"), d.get("bias"), int(stride),
                   int(d.get("padding", 0)), int(d.get("size", 2)))


@dataclass(frozen=True)
class Model:
    layers: tuple[LayerSpec, ...]
    store: WeightStore
    input_shape: tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        out = infer_shapes(self)[-1]
        if out != (self.num_classes,):
            raise ShapeMismatch(f"network ends in shape {out}, expected ({self.num_classes},)")

    def with_store(self, store: WeightStore) -> "Model":
        return replace(self, store=store)

    def description(self) -> dict:
        return {"input_shape": list(self.input_shape), "num_classes": self.num_classes,
                "layers": [l.to_json() for l in self.layers]}

    @classmethod
    def from_description(cls, desc: dict, store: WeightStore) -> "Model":
        return cls(tuple(LayerSpec.from_json(l) for l in desc["layers"]), store,
                   tuple(desc["input_shape"]), int(desc["num_classes"]))

    @classmethod
    def load(cls, path, store: WeightStore) -> "Model":
        return cls.from_description(json.loads(Path(path).read_text()), store)


def infer_shapes(model: Model) -> list[tuple[int, ...]]:
    """Per-sample activation shapes, input first; validates tensor shapes."""
    shape = tuple(model.input_shape)
    shapes = [shape]
    for layer in model.layers:
        if layer.kind == "conv2d":
            w = model.store[layer.weight].shape
            if len(shape) != 3 or len(w) != 4 or w[1] != shape[0]:
                raise ShapeMismatch(f"conv {layer.weight} {w} cannot take input {shape}")
            _check_bias(model, layer, w[0])
            h = (shape[1] + 2 * layer.padding - w[2]) // layer.stride + 1
            wd = (shape[2] + 2 * layer.padding - w[3]) // layer.stride + 1
            shape = (w[0], h, wd)
        elif layer.kind == "dense":
            w = model.store[layer.weight].shape
            if len(shape) != 1 or len(w) != 2 or w[1] != shape[0]:
                raise ShapeMismatch(f"dense {layer.weight} {w} cannot take input {shape}")
            _check_bias(model, layer, w[0])
            shape = (w[0],)
        elif layer.kind == "maxpool2d":
            if len(shape) != 3:
                raise ShapeMismatch(f"maxpool needs CHW input, got {shape}")
            shape = (shape[0], (shape[1] - layer.size) // layer.stride + 1,
                     (shape[2] - layer.size) // layer.stride + 1)
        elif layer.kind == "flatten":
            shape = (math.prod(shape),)
        if min(shape) <= 0:
            raise ShapeMismatch(f"layer {layer.kind} produces empty shape {shape}")
        shapes.append(shape)
    return shapes


def _check_bias(model: Model, layer: LayerSpec, n: int) -> None:
    if layer.bias is not None and model.store[layer.bias].shape != (n,):
        raise ShapeMismatch(f"bias {layer.bias} should have shape ({n},)")


def load_weights(model: Model) -> dict[str, np.ndarray]:
    names = {n for l in model.layers for n in (l.weight, l.bias) if n is not None}
    return {n: decode_tensor(model.store, n) for n in sorted(names)}


def _conv2d(x: np.ndarray, w: np.ndarray, b, stride: int, padding: int) -> np.ndarray:
    n, c, _, _ = x.shape
    o, _, kh, kw = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # n, c, oh, ow, kh, kw
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    out = cols @ w.reshape(o, -1).T
    if b is not None:
        out = out + b
    return out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)


def _maxpool(x: np.ndarray, size: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (size, size), axis=(2, 3))
    # np.max propagates NaN from any window element
    return win[:, :, ::stride, ::stride].max(axis=(4, 5))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: Model, x: np.ndarray, weights: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Class scores for one CHW sample or an NCHW batch."""
    x = np.asarray(x, dtype=np.float32)
    single = x.shape == model.input_shape
    if single:
        x = x[None]
    if x.shape[1:] != model.input_shape:
        raise ShapeMismatch(f"input {x.shape[1:]} does not match {model.input_shape}")
    if weights is None:
        weights = load_weights(model)
    with np.errstate(all="ignore"):
        for layer in model.layers:
            w = weights.get(layer.weight) if layer.weight else None
            b = weights.get(layer.bias) if layer.bias else None
            if layer.kind == "conv2d":
                x = _conv2d(x, w, b, layer.stride, layer.padding)
            elif layer.kind == "dense":
                x = x @ w.T
                if b is not None:
                    x = x + b
            elif layer.kind == "relu":
                x = np.maximum(x, np.float32(0))
            elif layer.kind == "maxpool2d":
                x = _maxpool(x, layer.size, layer.stride)
            elif layer.kind == "flatten":
                x = x.reshape(x.shape[0], -1)
            elif layer.kind == "softmax":
                x = softmax(x)
            x = x.astype(np.float32, copy=False)
    return x[0] if single else x


@dataclass(frozen=True)
class EvalSet:
    images: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) int
    seed: int = 21
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ShapeMismatch("images and labels differ in length")
        if len(self.labels) == 0:
            raise ValueError("empty eval set")

    def __len__(self) -> int:
        return len(self.labels)

    def save(self, index_path, blob_path) -> None:
        blob_path = Path(blob_path)
        blob_path.write_bytes(np.ascontiguousarray(self.images, dtype="<f4").tobytes())
        index = {"blob": blob_path.name, "shape": list(self.images.shape[1:]),
                 "labels": [int(l) for l in self.labels], "seed": self.seed, **self.meta}
        Path(index_path).write_text(json.dumps(index) + "\n")

    @classmethod
    def load(cls, index_path, blob_path=None) -> "EvalSet":
        index_path = Path(index_path)
        index = json.loads(index_path.read_text())
        blob_path = Path(blob_path) if blob_path else index_path.with_name(index["blob"])
        labels = np.asarray(index["labels"], dtype=np.int64)
        images = np.frombuffer(blob_path.read_bytes(), dtype="<f4").astype(np.float32)
        images = images.reshape((len(labels), *index["shape"]))
        meta = {k: v for k, v in index.items() if k not in ("blob", "shape", "labels", "seed")}
        return cls(images, labels, int(index.get("seed", 21)), meta)


def rank_classes(scores: np.ndarray) -> np.ndarray:
    """Class indices per row, best first; NaN ranks below every number and
    ties go to the lower class index."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    nan = np.isnan(scores)
    key = np.where(nan, 0.0, -scores)
    idx = np.broadcast_to(np.arange(scores.shape[1]), scores.shape).copy()
    return np.lexsort((idx, key, nan), axis=-1)


def top_k_from_scores(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty eval set")
    ranked = rank_classes(scores)[:, :k]
    return float(np.mean(np.any(ranked == labels[:, None], axis=1)))


def top_k_accuracy(model: Model, eval_set: EvalSet, k: int = 1,
                   weights: dict[str, np.ndarray] | None = None) -> float:
    return top_k_from_scores(forward(model, eval_set.images, weights), eval_set.labels, k)


def evaluate(model: Model, eval_set: EvalSet) -> tuple[float, float]:
    """(Top-1, Top-5) from one forward pass."""
    scores = forward(model, eval_set.images)
    return (top_k_from_scores(scores, eval_set.labels, 1),
            top_k_from_scores(scores, eval_set.labels, 5))
