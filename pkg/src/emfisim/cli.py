"""``emfisim`` command line.

Every subcommand accepts ``--config PATH`` (a JSON object whose keys match the
long flag names, dashes or underscores) and explicit flags override config
values. Exit codes: 0 ok, 1 usage/config error, 2 domain error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import analytics, campaign, faults
from .errors import DegenerateBaseline, EmfiSimError
from .faults import FaultMask, FaultModel
from .formats import FormatKind
from .nn import EvalSet, Model
from .store import WeightStore, convert_store

log = logging.getLogger("emfisim")

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_IO = 0, 1, 2, 3
FORMAT_NAMES = [f.value for f in FormatKind]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(path: Path, data: "bytes | str") -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        data = data.encode()
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    """Defaults < config file < explicit flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"config {args.config}: {e}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in loaded.items()})
        base = Path(args.config).resolve().parent
        # relative paths in a config file are relative to that file
        for k in ("model", "manifest", "blob", "eval", "out", "original", "corrupted", "mask"):
            if isinstance(cfg.get(k), str) and not os.path.isabs(cfg[k]) and k in loaded:
                cfg[k] = str(base / cfg[k])
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "func", "command", "verbose"):
            cfg[k] = v
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _load_store(cfg: dict) -> WeightStore:
    return WeightStore.load(cfg["manifest"], cfg["blob"])


def _fault_model(cfg: dict) -> FaultModel:
    fm = cfg.get("fault_model")
    if isinstance(fm, dict):
        model = FaultModel.from_json(fm)
    else:
        kind = cfg.get("fault") or (fm if isinstance(fm, str) else "emfi")
        params = {}
        if kind == "bitflip":
            params["ber"] = float(cfg.get("ber") if cfg.get("ber") is not None else 0.06)
        elif kind == "byteset":
            params["fraction"] = float(cfg.get("fraction") if cfg.get("fraction") is not None else 0.071)
            params["value"] = int(cfg.get("value") if cfg.get("value") is not None else 0xFF)
        elif kind == "emfi":
            for k in ("target_rate", "post_boundary_rate", "ff_prob", "row_len", "row_period"):
                if cfg.get(k) is not None:
                    params[k] = cfg[k]
        model = FaultModel(kind, params)
    return model


# -- subcommands ---------------------------------------------------------------

def cmd_quantize(cfg: dict) -> int:
    _require(cfg, "manifest", "blob", "format", "out")
    target = FormatKind.parse(_single_format(cfg["format"]))
    store = _load_store(cfg)
    out = convert_store(store, target)
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    out.save(outdir / "manifest.json", outdir / "weights.bin")
    log.info("wrote %s store (%d bytes) to %s", target.value, len(out.blob), outdir)
    return EXIT_OK


def _single_format(value) -> str:
    if isinstance(value, list):
        if len(value) != 1:
            raise UsageError("exactly one --format is expected here")
        return value[0]
    return value


def _report(original: bytes, corrupted: bytes, cfg: dict) -> analytics.CorruptionReport:
    if cfg.get("manifest"):
        with open(cfg["manifest"]) as f:
            manifest = json.load(f)
        pre = WeightStore.from_manifest(manifest, original)
        return analytics.fp_corruption_stats(pre, pre.with_blob(corrupted))
    fmt = cfg.get("format")
    if fmt and FormatKind.parse(_single_format(fmt)).is_float:
        kind = FormatKind.parse(_single_format(fmt))
        pre = analytics.single_tensor_store(original, kind)
        post = analytics.single_tensor_store(corrupted, kind)
        return analytics.fp_corruption_stats(pre, post)
    return analytics.raw_report(original, corrupted)


def _write_report(report: analytics.CorruptionReport, outdir: Path) -> None:
    _write(outdir / "report.json", analytics.report_json(report))
    _write(outdir / "report.csv", report.to_csv())


def cmd_inject(cfg: dict) -> int:
    _require(cfg, "blob", "out")
    blob = Path(cfg["blob"]).read_bytes()
    offset = int(cfg.get("offset") or 0)
    if not 0 <= offset < len(blob):
        raise UsageError(f"--offset {offset} outside blob of {len(blob)} bytes")
    window = int(cfg.get("window") or min(faults.MiB * 4, len(blob) - offset))
    seed = int(cfg.get("seed") if cfg.get("seed") is not None else 21)
    mask = _fault_model(cfg).make(window, seed)
    corrupted = faults.apply_mask(blob, mask, offset)
    outdir = Path(cfg["out"])
    _write(outdir / "corrupted.bin", corrupted)
    _write(outdir / "mask.json", json.dumps(mask.to_json()) + "\n")
    _write(outdir / "mask.bin", mask.to_binary())
    report = _report(blob, corrupted, cfg)
    _write_report(report, outdir)
    log.info("%d fault records, BER %.4f", len(mask), report.ber)
    return EXIT_OK


def cmd_analyze(cfg: dict) -> int:
    _require(cfg, "original", "corrupted")
    original = Path(cfg["original"]).read_bytes()
    corrupted = Path(cfg["corrupted"]).read_bytes()
    report = _report(original, corrupted, cfg)
    if cfg.get("out"):
        _write_report(report, Path(cfg["out"]))
    else:
        sys.stdout.write(analytics.report_json(report))
    return EXIT_OK


def _campaign_inputs(cfg: dict) -> tuple[Model, EvalSet]:
    from . import toy

    d = toy.toy_dir()
    manifest = cfg.get("manifest") or d / "manifest.json"
    blob = cfg.get("blob") or d / "weights.bin"
    store = WeightStore.load(manifest, blob)
    model = Model.load(cfg.get("model") or d / "model.json", store)
    ev = EvalSet.load(cfg.get("eval") or d / "eval.json")
    return model, ev


def _map_geometry(chunk_len: int) -> tuple[int, int]:
    width = 256
    return width, max(1, -(-chunk_len // (width * 256)))


def cmd_campaign(cfg: dict) -> int:
    _require(cfg, "out")
    formats = cfg.get("format") or cfg.get("formats") or ["fp32"]
    if isinstance(formats, str):
        formats = [formats]
    model, ev = _campaign_inputs(cfg)
    spec = campaign.CampaignSpec(
        model=model, eval_set=ev, fault_model=_fault_model(cfg),
        seed=int(cfg.get("seed") if cfg.get("seed") is not None else 21),
        formats=tuple(formats), chunk_len=cfg.get("chunk_len"),
        workers=int(cfg.get("workers") or 1),
    )
    results = campaign.run_campaign(spec)
    outdir = Path(cfg["out"])
    for kind, res in results.items():
        _write(outdir / f"results_{kind.value}.csv", res.to_csv())
        _write(outdir / f"regions_{kind.value}.csv", res.regions_csv())
        if cfg.get("maps", True):
            for c in res.chunks:
                start, end = c.byte_range
                mask = spec.fault_model.make(end - start, campaign.chunk_seed(spec.seed, c.chunk_index))
                fmap = analytics.render_fault_map(mask, *_map_geometry(end - start))
                _write(outdir / "maps" / f"{kind.value}_chunk{c.chunk_index:03d}.pgm", fmap.to_pgm())
        regions = ", ".join(f"{r} {t1:.3f}" for r, (t1, _) in res.regions().items())
        log.info("%s: baseline %.3f, mean %.3f (%s)", kind.value, res.baseline_top1, res.mean_top1(), regions)
    _write(outdir / "campaign.json", campaign.campaign_document(spec, results))
    return EXIT_OK


def cmd_faultmap(cfg: dict) -> int:
    _require(cfg, "mask", "out")
    path = Path(cfg["mask"])
    try:
        mask = FaultMask.load_json(path)
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise UsageError(f"cannot parse mask {path}: {e}") from None
    fmap = analytics.render_fault_map(mask, int(cfg.get("width") or 256), int(cfg.get("bytes_per_cell") or 64))
    outdir = Path(cfg["out"])
    _write(outdir / "faultmap.pgm", fmap.to_pgm())
    _write(outdir / "faultmap.csv", fmap.to_csv())
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="emfisim", description="EMFI weight-corruption simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, fmt_multi=False):
        sp.add_argument("-v", "--verbose", action="store_true", default=None)
        sp.add_argument("--config", help="JSON file with default settings")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        if fmt_multi:
            sp.add_argument("--format", action="append", choices=FORMAT_NAMES)
        else:
            sp.add_argument("--format", choices=FORMAT_NAMES)
        sp.add_argument("--chunk-len", type=int, dest="chunk_len")
        sp.add_argument("--manifest")
        sp.add_argument("--blob")

    def fault_flags(sp):
        sp.add_argument("--fault", choices=["emfi", "bitflip", "byteset", "none"])
        sp.add_argument("--ber", type=float)
        sp.add_argument("--fraction", type=float)
        sp.add_argument("--value", type=lambda s: int(s, 0))
        sp.add_argument("--target-rate", type=float, dest="target_rate")
        sp.add_argument("--post-boundary-rate", type=float, dest="post_boundary_rate")
        sp.add_argument("--ff-prob", type=float, dest="ff_prob")

    q = sub.add_parser("quantize", help="re-encode an FP32 store as fp16/int8/int4")
    common(q)
    q.set_defaults(func=cmd_quantize)

    i = sub.add_parser("inject", help="apply a generated fault mask to a blob")
    common(i)
    fault_flags(i)
    i.add_argument("--offset", type=int)
    i.add_argument("--window", type=int)
    i.set_defaults(func=cmd_inject)

    a = sub.add_parser("analyze", help="corruption statistics for two blobs")
    common(a)
    a.add_argument("--original")
    a.add_argument("--corrupted")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("campaign", help="chunked sensitivity campaign")
    common(c, fmt_multi=True)
    fault_flags(c)
    c.add_argument("--model")
    c.add_argument("--eval")
    c.add_argument("--workers", type=int)
    c.set_defaults(func=cmd_campaign)

    f = sub.add_parser("faultmap", help="render a mask file as PGM + CSV")
    common(f)
    f.add_argument("--mask")
    f.add_argument("--width", type=int)
    f.add_argument("--bytes-per-cell", type=int, dest="bytes_per_cell")
    f.set_defaults(func=cmd_faultmap)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _merge_config(args, {})
        return args.func(cfg)
    except UsageError as e:
        print(f"emfisim: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateBaseline as e:
        print(f"emfisim: degenerate baseline: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except (EmfiSimError, ValueError) as e:
        print(f"emfisim: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as e:
        print(f"emfisim: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
