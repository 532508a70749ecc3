"""Chunked sensitivity campaigns.

The weight blob is cut into contiguous byte chunks; each chunk in turn gets a
fresh fault mask while the rest of the blob stays clean, and the faulted model
is evaluated on the full eval set.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analytics import CorruptionReport, fp_corruption_stats
from .errors import DegenerateBaseline
from .faults import FaultModel, MiB, apply_mask
from .formats import FormatKind
from .nn import EvalSet, Model, evaluate
from .store import WeightStore, convert_store

REGIONS = ("Front", "Middle", "Back")
DEFAULT_CHUNK_LEN = 4 * MiB
MIN_DESK_CHUNKS = 16

CSV_COLUMNS = ["chunk_index", "byte_start", "byte_end", "region", "format", "ber",
               "feff_fraction", "nan_fraction", "inf_fraction", "range_expansion",
               "top1", "top5"]


def split_chunks(store_or_len, chunk_len: int) -> list[tuple[int, int]]:
    total = store_or_len if isinstance(store_or_len, int) else len(store_or_len.blob)
    if total <= 0:
        raise ValueError("cannot split an empty blob")
    if chunk_len <= 0:
        raise ValueError("chunk_len must be positive")
    return [(s, min(s + chunk_len, total)) for s in range(0, total, chunk_len)]


def chunk_count(total_len: int, chunk_len: int) -> int:
    return -(-total_len // chunk_len)


def default_chunk_len(total_len: int) -> int:
    """4 MiB for large blobs; 1/16 of the blob below that so small models
    still get a meaningful number of chunks."""
    if total_len >= DEFAULT_CHUNK_LEN:
        return DEFAULT_CHUNK_LEN
    return max(1, -(-total_len // MIN_DESK_CHUNKS))


def assign_region(byte_range: tuple[int, int], total_len: int) -> str:
    mid = (byte_range[0] + byte_range[1]) / 2
    # compare 3*mid against T to avoid rounding at the tercile edges
    if 3 * mid < total_len:
        return "Front"
    if 3 * mid < 2 * total_len:
        return "Middle"
    return "Back"


@dataclass(frozen=True)
class CampaignSpec:
    model: Model  # FP32 reference model; other formats are quantized from it
    eval_set: EvalSet
    fault_model: FaultModel = field(default_factory=FaultModel)
    seed: int = 21
    formats: tuple[FormatKind, ...] = (FormatKind.FP32,)
    chunk_len: int | None = None  # None -> default_chunk_len per format
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "formats", tuple(FormatKind.parse(f) for f in self.formats))
        if self.chunk_len is not None and self.chunk_len <= 0:
            raise ValueError("chunk_len must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def describe(self) -> dict:
        return {"fault_model": self.fault_model.to_json(), "seed": self.seed,
                "formats": [f.value for f in self.formats], "chunk_len": self.chunk_len,
                "eval_size": len(self.eval_set), "eval_seed": self.eval_set.seed,
                "model": self.model.description()}


@dataclass
class ChunkResult:
    chunk_index: int
    byte_range: tuple[int, int]
    region: str
    format: FormatKind
    top1: float
    top5: float
    report: CorruptionReport

    def csv_row(self) -> dict:
        def f(v):
            return "" if v is None else repr(float(v))

        r = self.report
        return {"chunk_index": self.chunk_index, "byte_start": self.byte_range[0],
                "byte_end": self.byte_range[1], "region": self.region,
                "format": self.format.value, "ber": f(r.ber), "feff_fraction": f(r.feff_fraction),
                "nan_fraction": f(r.nan_fraction), "inf_fraction": f(r.inf_fraction),
                "range_expansion": f(r.range_expansion), "top1": f(self.top1), "top5": f(self.top5)}


@dataclass
class CampaignResult:
    format: FormatKind
    baseline_top1: float
    baseline_top5: float
    chunk_len: int
    total_len: int
    chunks: list[ChunkResult]

    def regions(self) -> dict[str, tuple[float, float]]:
        return aggregate_regions(self.chunks)

    def mean_top1(self) -> float:
        return float(np.mean([c.top1 for c in self.chunks]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow({"chunk_index": -1, "byte_start": 0, "byte_end": self.total_len,
                    "region": "baseline", "format": self.format.value, "ber": repr(0.0),
                    "top1": repr(self.baseline_top1), "top5": repr(self.baseline_top5)})
        for c in self.chunks:
            w.writerow(c.csv_row())
        return buf.getvalue()

    def regions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["format", "region", "chunks", "mean_top1", "mean_top5"])
        counts = {r: sum(c.region == r for c in self.chunks) for r in REGIONS}
        for region, (t1, t5) in self.regions().items():
            w.writerow([self.format.value, region, counts[region], repr(t1), repr(t5)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "format": self.format.value,
            "baseline": {"top1": self.baseline_top1, "top5": self.baseline_top5},
            "chunk_len": self.chunk_len,
            "total_len": self.total_len,
            "regions": {k: {"top1": v[0], "top5": v[1]} for k, v in self.regions().items()},
            "chunks": [{**c.csv_row(), "report": c.report.to_json()} for c in self.chunks],
        }


def aggregate_regions(results: list[ChunkResult]) -> dict[str, tuple[float, float]]:
    """Mean (Top-1, Top-5) per region; regions without chunks are left out."""
    if not results:
        raise ValueError("no chunk results to aggregate")
    out = {}
    for region in REGIONS:
        sel = [r for r in results if r.region == region]
        if sel:
            out[region] = (float(np.mean([r.top1 for r in sel])), float(np.mean([r.top5 for r in sel])))
    return out


def chunk_seed(seed: int, chunk_index: int) -> int:
    return seed ^ chunk_index


def _run_chunk(model: Model, eval_set: EvalSet, fault_model: FaultModel, seed: int,
               index: int, byte_range: tuple[int, int]) -> ChunkResult:
    store = model.store
    start, end = byte_range
    mask = fault_model.make(end - start, chunk_seed(seed, index))
    faulted = store.with_blob(apply_mask(store.blob, mask, start))
    report = fp_corruption_stats(store, faulted, window=byte_range)
    top1, top5 = evaluate(model.with_store(faulted), eval_set)
    fmt = store.tensors[0].format
    return ChunkResult(index, byte_range, assign_region(byte_range, len(store.blob)), fmt,
                       top1, top5, report)


def run_format(model: Model, eval_set: EvalSet, fault_model: FaultModel, seed: int,
               chunk_len: int | None = None, workers: int = 1) -> CampaignResult:
    """Campaign over one already-encoded model."""
    total = len(model.store.blob)
    chunk_len = chunk_len or default_chunk_len(total)
    top1, top5 = evaluate(model, eval_set)
    if top1 <= 3.0 / model.num_classes:
        raise DegenerateBaseline(f"baseline Top-1 {top1:.4f} is within 3x of random guessing")
    ranges = split_chunks(total, chunk_len)
    args = [(model, eval_set, fault_model, seed, i, r) for i, r in enumerate(ranges)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            chunks = list(pool.map(lambda a: _run_chunk(*a), args))
    else:
        chunks = [_run_chunk(*a) for a in args]
    chunks.sort(key=lambda c: c.chunk_index)
    return CampaignResult(model.store.tensors[0].format, top1, top5, chunk_len, total, chunks)


def model_in_format(model: Model, kind: FormatKind) -> Model:
    if model.store.formats == {kind}:
        return model
    return model.with_store(convert_store(model.store, kind))


def run_campaign(spec: CampaignSpec) -> dict[FormatKind, CampaignResult]:
    """Run every requested format; results keyed by format in request order."""
    out = {}
    for kind in spec.formats:
        m = model_in_format(spec.model, kind)
        out[kind] = run_format(m, spec.eval_set, spec.fault_model, spec.seed,
                               spec.chunk_len, spec.workers)
    return out


def campaign_document(spec: CampaignSpec, results: dict[FormatKind, CampaignResult]) -> str:
    doc = {"spec": spec.describe(), "results": [r.to_json() for r in results.values()]}
    return json.dumps(doc, indent=2) + "\n"
