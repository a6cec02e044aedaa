"""Command-line front end: dataset extraction, PCA, offline training, scene encoding, sweeps."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .features import PcaModel, pca_apply, pca_fit
from .harness import TRAINING_QPS, Dataset, EncodeParams
from .media import BLOCK_SIZES, MediaFormatError, load_frames
from .mlp import FORMAT_VERSION, ModelFormatError, TrainConfig
from .strategy import (DEFAULT_HIDDEN, OFFLINE_EPOCHS, MissingModelError, StrategyBundle, StrategyKind,
                       load_bundle, save_bundle, train_offline)

log = logging.getLogger("fastintra")

FORMATS = ("pgm", "y4m", "raw-yuv420-8bit")
DEFAULT_MAX_FRAMES = 8


class UsageError(Exception):
    """Contradictory or incomplete flags detected after parsing."""


# ------------------------------------------------------------------ parser


def _input_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("input")
    g.add_argument("-i", "--input", action="append", default=[], metavar="PATH",
                   help="input sequence (repeatable)")
    g.add_argument("--format", choices=FORMATS, help="input format (default: from extension)")
    g.add_argument("--width", type=int, help="frame width, raw input only")
    g.add_argument("--height", type=int, help="frame height, raw input only")
    g.add_argument("--max-frames", type=int, default=DEFAULT_MAX_FRAMES)
    g.add_argument("--block-size", type=int, default=16, choices=BLOCK_SIZES)


def _encode_flags(p: argparse.ArgumentParser, grid: bool) -> None:
    p.add_argument("--model", help="model bundle from train-offline")
    p.add_argument("--strategy", choices=[k.value for k in StrategyKind], default=None,
                   help="default: the bundle's strategy, or online without a bundle")
    p.add_argument("--qp", type=int, default=32)
    if grid:
        p.add_argument("--taus", type=float, nargs="+", default=[0.7])
        p.add_argument("--ks", type=int, nargs="+", default=[2])
        p.add_argument("--rs", type=int, nargs="+", default=[2])
    else:
        p.add_argument("--tau", type=float, default=0.7)
        p.add_argument("--k", type=int, default=2)
        p.add_argument("--r", type=int, default=2)


def _report_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("-o", "--output", required=True, help="report path")
    p.add_argument("--report-format", choices=("csv", "json"), default="csv")
    p.add_argument("--timings", action="store_true",
                   help="fill wall-clock columns (makes reports run-dependent)")
    p.add_argument("--per-block", action="store_true", help="per-block decisions (JSON only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fastintra", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("extract", help="labelled feature dataset from frames")
    _input_flags(p)
    p.add_argument("--qps", type=int, nargs="+", default=list(TRAINING_QPS))
    p.add_argument("-o", "--output", required=True, help="dataset JSON path")

    p = sub.add_parser("fit-pca", help="fit the feature PCA on a dataset")
    p.add_argument("--dataset", action="append", required=True, metavar="PATH")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("train-offline", help="train offline models, one per block size")
    p.add_argument("--dataset", action="append", required=True, metavar="PATH")
    p.add_argument("--pca", action="append", default=[], metavar="PATH",
                   help="PCA file per block size (default: fit on the dataset)")
    p.add_argument("--hidden", type=int, default=DEFAULT_HIDDEN[StrategyKind.OFFLINE])
    p.add_argument("--max-epochs", type=int, default=OFFLINE_EPOCHS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="model bundle path")

    p = sub.add_parser("encode", help="fast-path coding of each input scene")
    _input_flags(p)
    _encode_flags(p, grid=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-model", help="write the bundle including scene-trained models")
    _report_flags(p)

    p = sub.add_parser("sweep", help="encode over a tau/K/R grid with shared models")
    _input_flags(p)
    _encode_flags(p, grid=True)
    p.add_argument("--seed", type=int, default=0)
    _report_flags(p)

    p = sub.add_parser("baseline", help="exhaustive 67-mode coding")
    _input_flags(p)
    p.add_argument("--qp", type=int, default=32)
    _report_flags(p)
    return parser


# ----------------------------------------------------------------- helpers


def _scenes(args) -> list[tuple[str, list]]:
    if not args.input:
        raise UsageError("no input frames given (use -i/--input)")
    raw = args.format == "raw-yuv420-8bit" or (args.format is None and any(
        Path(p).suffix.lower() not in (".pgm", ".pnm", ".y4m") for p in args.input))
    if raw and not (args.width and args.height):
        raise UsageError("raw YUV input needs --width and --height")
    if not raw and (args.width or args.height):
        raise UsageError("--width/--height only apply to raw YUV input")
    if args.max_frames < 1:
        raise UsageError("--max-frames must be positive")
    scenes = []
    for path in args.input:
        frames = load_frames(path, args.format, args.width, args.height, args.max_frames)
        scenes.append((Path(path).stem, frames))
    return scenes


def _load_datasets(paths) -> dict[int, Dataset]:
    by_size: dict[int, list[Dataset]] = {}
    for path in paths:
        ds = Dataset.from_dict(json.loads(Path(path).read_text()))
        by_size.setdefault(ds.block_size, []).append(ds)
    return {size: Dataset.merge(parts) for size, parts in sorted(by_size.items())}


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _load_pca(path) -> tuple[int, PcaModel]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported PCA file version {doc.get('format_version')!r}")
    return int(doc["block_size"]), PcaModel.from_dict(doc["pca"])


def _bundle(args) -> StrategyBundle:
    kind = args.strategy
    if args.model:
        bundle = load_bundle(args.model)
        return bundle.with_kind(kind or bundle.kind)
    kind = StrategyKind(kind or StrategyKind.ONLINE)
    if kind is not StrategyKind.ONLINE:
        raise UsageError(f"--strategy {kind.value} needs --model")
    return StrategyBundle(kind)


def _check_report(args) -> None:
    if args.per_block and args.report_format != "json":
        raise UsageError("--per-block needs --report-format json")


def _write_reports(args, reports) -> None:
    harness.report_write(reports, args.output, args.report_format, args.timings, args.per_block)
    log.info("wrote %d report(s) to %s", len(reports), args.output)


# ---------------------------------------------------------------- commands


def cmd_extract(args) -> None:
    parts = []
    for name, frames in _scenes(args):
        ds = harness.extract_dataset(frames, args.qps, args.block_size)
        log.info("%s: %d samples", name, len(ds))
        parts.append(ds)
    _write_json(args.output, Dataset.merge(parts).to_dict())


def cmd_fit_pca(args) -> None:
    data = _load_datasets(args.dataset)
    if len(data) != 1:
        raise UsageError("fit-pca takes datasets of a single block size")
    (size, ds), = data.items()
    _write_json(args.output, {"format_version": FORMAT_VERSION, "block_size": size,
                              "pca": pca_fit(ds.concat).to_dict()})


def cmd_train_offline(args) -> None:
    data = _load_datasets(args.dataset)
    pcas = dict(_load_pca(p) for p in args.pca)
    extra = set(pcas) - set(data)
    if extra:
        raise UsageError(f"PCA given for block sizes without data: {sorted(extra)}")
    for size, ds in data.items():
        if size not in pcas:
            pcas[size] = pca_fit(ds.concat)
    inputs = {size: (pca_apply(ds.concat, pcas[size]), ds.labels) for size, ds in data.items()}
    config = TrainConfig(max_epochs=args.max_epochs, rng_seed=args.seed)
    models, hists = train_offline(inputs, config, args.hidden)
    for size, h in hists.items():
        log.info("size %d: %d epochs (%s), best validation loss %.4f", size, h.epochs_run, h.stop_reason,
                 h.best_val_loss)
    save_bundle(StrategyBundle(StrategyKind.OFFLINE, models, pcas), args.output)


def cmd_encode(args) -> None:
    _check_report(args)
    bundle = _bundle(args)
    params = EncodeParams(bundle.kind, args.tau, args.k, args.r, args.qp, args.block_size)
    scenes = _scenes(args)
    if args.save_model and len(scenes) != 1:
        raise UsageError("--save-model needs exactly one input scene")
    reports = []
    for name, frames in scenes:
        state = harness.prepare_scene(frames, bundle, params, seed=args.seed)
        reports.append(harness.run_scene(state, params, name))
        if args.save_model:
            save_bundle(state.bundle, args.save_model)
    _write_reports(args, reports)


def cmd_sweep(args) -> None:
    _check_report(args)
    bundle = _bundle(args)
    for tau in args.taus:
        EncodeParams(bundle.kind, tau, args.ks[0], args.rs[0], args.qp, args.block_size)
    for k in args.ks:
        EncodeParams(bundle.kind, args.taus[0], k, args.rs[0], args.qp, args.block_size)
    for r in args.rs:
        EncodeParams(bundle.kind, args.taus[0], args.ks[0], r, args.qp, args.block_size)
    reports = []
    for name, frames in _scenes(args):
        reports += harness.sweep(frames, bundle, args.taus, args.ks, args.rs, bundle.kind, args.qp,
                                 args.block_size, scene_name=name, seed=args.seed)
    _write_reports(args, reports)


def cmd_baseline(args) -> None:
    _check_report(args)
    if not 0 <= args.qp <= 51:
        raise UsageError("--qp must be in [0, 51]")
    reports = [harness.baseline_encode(frames, args.qp, args.block_size, name) for name, frames in _scenes(args)]
    _write_reports(args, reports)


COMMANDS = {"extract": cmd_extract, "fit-pca": cmd_fit_pca, "train-offline": cmd_train_offline,
            "encode": cmd_encode, "sweep": cmd_sweep, "baseline": cmd_baseline}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fastintra {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (MediaFormatError, ModelFormatError, MissingModelError, ValueError, KeyError, OSError) as exc:
        print(f"fastintra {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
